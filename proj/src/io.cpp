#include "splatshard/io.hpp"

#include "splatshard/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace splatshard {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingAssetError(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

PointCloud parse_ply(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(source, line_no, what, "unexpected end of file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next("magic");
  if (line != "ply") throw ParseError(source, line_no, "magic", "expected 'ply'");
  next("format");
  if (line.rfind("format ascii 1.0", 0) != 0)
    throw ParseError(source, line_no, "format", "only 'format ascii 1.0' is supported");

  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<std::string> props;
  std::vector<std::pair<std::string, std::size_t>> other_elements;  // before vertex
  for (;;) {
    next("header");
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info" || key.empty()) continue;
    if (key == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      if (count < 0) throw ParseError(source, line_no, "element", "bad element count");
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = std::size_t(count);
        seen_vertex = true;
      } else if (!seen_vertex) {
        other_elements.emplace_back(name, std::size_t(count));
      }
    } else if (key == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") {
        if (in_vertex)
          throw ParseError(source, line_no, "property", "list properties on vertex are not supported");
        continue;
      }
      ls >> name;
      if (in_vertex) props.push_back(name);
    } else {
      throw ParseError(source, line_no, "header", "unknown header keyword '" + key + "'");
    }
  }
  if (!seen_vertex) throw ParseError(source, line_no, "vertex", "no vertex element");
  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (std::size_t k = 0; k < props.size(); ++k) {
    const auto& p = props[k];
    if (p == "x") ix = int(k);
    if (p == "y") iy = int(k);
    if (p == "z") iz = int(k);
    if (p == "red") ir = int(k);
    if (p == "green") ig = int(k);
    if (p == "blue") ib = int(k);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError(source, line_no, "vertex", "missing x, y or z");
  PointCloud cloud;
  cloud.has_color = ir >= 0 && ig >= 0 && ib >= 0;
  for (const auto& [name, count] : other_elements)
    for (std::size_t k = 0; k < count; ++k) next(name.c_str());
  std::vector<double> values(props.size());
  for (std::size_t v = 0; v < vertex_count; ++v) {
    next("vertex");
    std::istringstream ls(line);
    for (std::size_t k = 0; k < props.size(); ++k) {
      std::string tok;
      if (!(ls >> tok))
        throw ParseError(source, line_no, props[k], "vertex " + std::to_string(v) + " has too few values");
      try {
        std::size_t used = 0;
        values[k] = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(source, line_no, props[k],
                         "vertex " + std::to_string(v) + ": '" + tok + "' is not a number");
      }
      if (!std::isfinite(values[k]))
        throw ParseError(source, line_no, props[k],
                         "vertex " + std::to_string(v) + " has a non-finite value");
    }
    cloud.points.emplace_back(values[std::size_t(ix)], values[std::size_t(iy)], values[std::size_t(iz)]);
    if (cloud.has_color)
      cloud.colors.emplace_back(values[std::size_t(ir)] / 255.0, values[std::size_t(ig)] / 255.0,
                                values[std::size_t(ib)] / 255.0);
    else
      cloud.colors.emplace_back(0.5, 0.5, 0.5);
  }
  return cloud;
}

PointCloud read_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingAssetError(path.string());
  return parse_ply(in, path.string());
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
  std::ostringstream out;
  out.precision(17);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    const Eigen::Vector3d c = i < cloud.colors.size() ? cloud.colors[i] : Eigen::Vector3d::Constant(0.5);
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    for (int k = 0; k < 3; ++k) out << ' ' << std::lround(std::clamp(c[k], 0.0, 1.0) * 255.0);
    out << '\n';
  }
  write_text(path, out.str());
}

std::vector<Camera> parse_cameras(const std::string& text, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, 0, "json", e.what());
  }
  if (!doc.is_array()) throw ParseError(source, 0, "cameras", "expected a JSON array");
  std::vector<Camera> cameras;
  for (std::size_t k = 0; k < doc.size(); ++k) {
    const auto& j = doc[k];
    const std::string where = "cameras[" + std::to_string(k) + "].";
    auto field = [&](const char* name) -> const nlohmann::json& {
      if (!j.is_object() || !j.contains(name)) throw ParseError(source, 0, where + name, "missing");
      return j.at(name);
    };
    auto number = [&](const char* name) {
      const auto& v = field(name);
      if (!v.is_number()) throw ParseError(source, 0, where + name, "expected a number");
      return v.get<double>();
    };
    auto integer = [&](const char* name) {
      const auto& v = field(name);
      if (!v.is_number_integer()) throw ParseError(source, 0, where + name, "expected an integer");
      return v.get<int>();
    };
    Camera cam;
    cam.id = integer("id");
    cam.fx = number("fx");
    cam.fy = number("fy");
    cam.cx = number("cx");
    cam.cy = number("cy");
    cam.width = integer("width");
    cam.height = integer("height");
    const auto& m = field("world_to_camera");
    if (!m.is_array() || m.size() != 12)
      throw ParseError(source, 0, where + "world_to_camera", "expected 12 numbers");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        const auto& v = m[std::size_t(r * 4 + c)];
        if (!v.is_number()) throw ParseError(source, 0, where + "world_to_camera", "expected numbers");
        cam.world_to_camera(r, c) = v.get<double>();
      }
    const auto& role = field("role");
    if (role == "train")
      cam.role = CameraRole::Train;
    else if (role == "test")
      cam.role = CameraRole::Test;
    else
      throw ParseError(source, 0, where + "role", "expected \"train\" or \"test\"");
    try {
      cam.validate();
    } catch (const ContractViolation& e) {
      throw ParseError(source, 0, where + "intrinsics", e.what());
    }
    for (const auto& other : cameras)
      if (other.id == cam.id) throw ParseError(source, 0, where + "id", "duplicate camera id " + std::to_string(cam.id));
    cameras.push_back(cam);
  }
  return cameras;
}

std::vector<Camera> read_cameras(const fs::path& path) {
  return parse_cameras(read_text(path), path.string());
}

std::string cameras_to_json(const std::vector<Camera>& cameras) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& cam : cameras) {
    nlohmann::json m = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m.push_back(cam.world_to_camera(r, c));
    doc.push_back({{"id", cam.id},
                   {"fx", cam.fx},
                   {"fy", cam.fy},
                   {"cx", cam.cx},
                   {"cy", cam.cy},
                   {"width", cam.width},
                   {"height", cam.height},
                   {"world_to_camera", m},
                   {"role", cam.role == CameraRole::Train ? "train" : "test"}});
  }
  return doc.dump(2) + "\n";
}

void write_cameras(const fs::path& path, const std::vector<Camera>& cameras) {
  write_text(path, cameras_to_json(cameras));
}

Image<float> read_ppm(const fs::path& path) {
  const std::string data = read_text(path);
  const std::string source = path.string();
  std::size_t pos = 0;
  auto token = [&](const char* field) {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) throw ParseError(source, 0, field, "unexpected end of header");
    return data.substr(start, pos - start);
  };
  if (token("magic") != "P6") throw ParseError(source, 0, "magic", "expected P6");
  auto as_int = [&](const char* field) {
    const std::string t = token(field);
    try {
      return std::stoi(t);
    } catch (const std::exception&) {
      throw ParseError(source, 0, field, "'" + t + "' is not an integer");
    }
  };
  const int w = as_int("width"), h = as_int("height"), maxval = as_int("maxval");
  if (w <= 0 || h <= 0) throw ParseError(source, 0, "size", "non-positive image size");
  if (maxval != 255) throw ParseError(source, 0, "maxval", "only maxval 255 is supported");
  ++pos;  // single whitespace byte after maxval
  const std::size_t bytes = std::size_t(w) * std::size_t(h) * 3;
  if (data.size() < pos + bytes) throw ParseError(source, 0, "pixels", "truncated pixel data");
  Image<float> img(w, h);
  for (std::size_t k = 0; k < bytes; ++k)
    img.rgb(Eigen::Index(k / 3), Eigen::Index(k % 3)) =
        float(static_cast<unsigned char>(data[pos + k])) / 255.0f;
  return img;
}

template <typename Scalar>
void write_ppm(const fs::path& path, const Image<Scalar>& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + std::size_t(image.rgb.size()));
  for (Eigen::Index p = 0; p < image.rgb.rows(); ++p)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(double(image.rgb(p, c)), 0.0, 1.0);
      out[header + std::size_t(p) * 3 + std::size_t(c)] = char(std::lround(v * 255.0));
    }
  write_text(path, out);
}

template void write_ppm<float>(const fs::path&, const Image<float>&);
template void write_ppm<double>(const fs::path&, const Image<double>&);

fs::path image_path(const fs::path& images_dir, int camera_id) {
  return images_dir / (std::to_string(camera_id) + ".ppm");
}

Scene load_scene(const fs::path& cloud_path, const fs::path& cameras_path, const fs::path& images_dir) {
  const PointCloud cloud = read_ply(cloud_path);
  if (cloud.points.empty()) throw ParseError(cloud_path.string(), 0, "vertex", "point cloud is empty");
  Scene scene;
  scene.cameras = read_cameras(cameras_path);
  if (!fs::is_directory(images_dir)) throw MissingAssetError(images_dir.string());
  for (const auto& cam : scene.cameras) {
    const fs::path p = image_path(images_dir, cam.id);
    if (!fs::exists(p)) {
      if (cam.role == CameraRole::Train) throw MissingAssetError(p.string());
      continue;
    }
    Image<float> img = read_ppm(p);
    if (img.width != cam.width || img.height != cam.height)
      throw ParseError(p.string(), 0, "size", "image size does not match camera " + std::to_string(cam.id));
    scene.images.emplace(cam.id, std::move(img));
  }
  scene.gaussians = initialize_from_cloud(cloud.points, cloud.colors);
  scene.d0 = reference_distance(scene.gaussians, scene.cameras);
  return scene;
}

void save_scene_files(const fs::path& dir, const PointCloud& cloud, const std::vector<Camera>& cameras,
                      const std::map<int, Image<float>>& images) {
  fs::create_directories(dir / "images");
  write_ply(dir / "points.ply", cloud);
  write_cameras(dir / "cameras.json", cameras);
  for (const auto& [id, img] : images) write_ppm(image_path(dir / "images", id), img);
}

}  // namespace splatshard
