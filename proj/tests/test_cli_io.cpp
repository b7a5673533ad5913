#include "support.hpp"

#include "splatshard/checkpoint.hpp"
#include "splatshard/errors.hpp"
#include "splatshard/io.hpp"
#include "splatshard/plot.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace splatshard;
using namespace testsupport;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("splatshard_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int status = -1;
  std::string out, err;
};

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + SPLATSHARD_CLI + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

std::string bytes_of(const fs::path& p) { return read_text(p); }

// A tiny scene and schedule that reaches both scoring passes within 30 steps.
const fs::path& trained_scene() {
  static const fs::path dir = [] {
    const fs::path d = scratch("trained");
    REQUIRE(cli("gen-scene --seed 2 --gaussians 12 --cameras 10 --width 24 --height 24 --out \"" + d.string() + "\"", d).status == 0);
    return d;
  }();
  return dir;
}

const std::string kSchedule =
    " --set total_steps=30 --set t1=10 --set t2=20 --set densify_start=5 --set densify_stop=15"
    " --set densify_interval=5 --set gate_enabled_after=1000 --set sh_unlock_interval=10";

}  // namespace

TEST_CASE("PLY round trip with and without colour") {
  const fs::path d = scratch("ply");
  PointCloud c;
  c.points = {{0, 0, 0}, {1.5, -2.25, 3}, {1e-3, 4, -5}};
  c.colors = {{1, 0, 0}, {0, 1, 0}, {0.2, 0.4, 0.6}};
  c.has_color = true;
  write_ply(d / "a.ply", c);
  const auto back = read_ply(d / "a.ply");
  REQUIRE(back.points.size() == 3);
  CHECK(back.has_color);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK((back.points[i] - c.points[i]).norm() < 1e-12);
    CHECK((back.colors[i] - c.colors[i]).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
  }

  std::istringstream plain("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                           "property float z\nproperty float nx\nend_header\n1 2 3 0\n4 5 6 1\n");
  const auto p = parse_ply(plain, "plain");
  CHECK_FALSE(p.has_color);
  CHECK(p.points[1] == Eigen::Vector3d(4, 5, 6));
  CHECK(p.colors[0] == Eigen::Vector3d::Constant(0.5));
}

TEST_CASE("PLY errors name the problem") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_ply(in, "bad.ply");
  };
  const std::string head = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  CHECK_THROWS_AS(parse(head + "1 2 3\nnan 0 0\n"), ParseError);
  CHECK_THROWS_AS(parse(head + "1 2 3\n"), ParseError);
  CHECK_THROWS_AS(parse("ply\nformat binary_little_endian 1.0\nend_header\n"), ParseError);
  CHECK_THROWS_AS(parse("not a ply\n"), ParseError);
  try {
    parse(head + "1 2 3\nnan 0 0\n");
  } catch (const ParseError& e) {
    CHECK(e.source() == "bad.ply");
    CHECK(e.line() == 9);
  }
  CHECK_THROWS_AS(read_ply("/nonexistent/cloud.ply"), MissingAssetError);
}

TEST_CASE("camera JSON round trip") {
  std::vector<Camera> cams{simple_camera(3, 40, 30), simple_camera(7, 16, 16, 5.0)};
  cams[1].role = CameraRole::Test;
  cams[1].cx = 7.25;
  const auto back = parse_cameras(cameras_to_json(cams), "cams");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == cams[i].id);
    CHECK(back[i].fx == cams[i].fx);
    CHECK(back[i].cx == cams[i].cx);
    CHECK(back[i].width == cams[i].width);
    CHECK(back[i].role == cams[i].role);
    CHECK((back[i].world_to_camera - cams[i].world_to_camera).cwiseAbs().maxCoeff() < 1e-15);
  }
  CHECK_THROWS_AS(parse_cameras("[{\"id\": 1}]", "cams"), ParseError);
  CHECK_THROWS_AS(parse_cameras("{", "cams"), ParseError);
  auto dup = cams;
  dup[1].id = 3;
  CHECK_THROWS_AS(parse_cameras(cameras_to_json(dup), "cams"), ParseError);
}

TEST_CASE("PPM round trip quantises to 8 bits") {
  const fs::path d = scratch("ppm");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  Image<double> img(9, 5);
  for (Eigen::Index i = 0; i < img.rgb.size(); ++i) img.rgb.data()[i] = u(rng);
  write_ppm(d / "x.ppm", img);
  const auto back = read_ppm(d / "x.ppm");
  CHECK(back.width == 9);
  CHECK(back.height == 5);
  for (Eigen::Index i = 0; i < img.rgb.size(); ++i) {
    const double want = std::round(std::clamp(img.rgb.data()[i], 0.0, 1.0) * 255) / 255;
    CHECK(std::abs(double(back.rgb.data()[i]) - want) < 1e-6);
  }
  write_ppm(d / "y.ppm", back);
  CHECK(bytes_of(d / "x.ppm") == bytes_of(d / "y.ppm"));
  write_text(d / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_ppm(d / "bad.ppm"), ParseError);
  write_text(d / "short.ppm", "P6\n4 4\n255\nabc");
  CHECK_THROWS_AS(read_ppm(d / "short.ppm"), ParseError);
}

TEST_CASE("scene loading") {
  const fs::path d = scratch("scene");
  PointCloud cloud;
  cloud.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  cloud.colors.assign(3, Eigen::Vector3d::Constant(0.5));
  std::vector<Camera> cams{simple_camera(0, 8, 8, 3.0), simple_camera(1, 8, 8, 5.0)};
  std::map<int, Image<float>> images{{0, Image<float>(8, 8)}, {1, Image<float>(8, 8)}};
  save_scene_files(d, cloud, cams, images);
  const Scene s = load_scene(d / "points.ply", d / "cameras.json", d / "images");
  CHECK(s.gaussians.size() == 3);
  CHECK(s.cameras.size() == 2);
  const Eigen::Vector3d centroid(1.0 / 3, 1.0 / 3, 0);
  const double want = 0.5 * ((cams[0].center() - centroid).norm() + (cams[1].center() - centroid).norm());
  CHECK(s.d0 == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS(load_scene(d / "points.ply", d / "cameras.json", d / "nope"), MissingAssetError);
  fs::remove(d / "images" / "1.ppm");
  CHECK_THROWS_AS(load_scene(d / "points.ply", d / "cameras.json", d / "images"), MissingAssetError);
}

TEST_CASE("metrics plot") {
  const std::string header = "step,loss,l1,ssim,scale_term,n_gaussians,active,visible,exchange_volume,wall_seconds,its_per_sec,test_psnr,test_ssim\n";
  const auto empty = plot_metrics(parse_metrics_csv(header, "m.csv"));
  CHECK(empty.svg.find("<svg") != std::string::npos);
  CHECK(empty.svg.find("class=\"axes\"") != std::string::npos);
  CHECK(empty.svg.find("<path") == std::string::npos);
  CHECK(empty.csv == "minutes,step,loss,test_psnr\n");

  auto vertices = [](const std::string& svg, const std::string& cls) {
    std::vector<std::pair<double, double>> pts;
    const std::regex path("class=\"" + cls + "\"[^>]* d=\"([^\"]*)\"");
    std::smatch m;
    if (!std::regex_search(svg, m, path)) return pts;
    const std::string d = m[1];
    const std::regex vertex("[ML]([-0-9.]+) ([-0-9.]+)");
    for (auto it = std::sregex_iterator(d.begin(), d.end(), vertex); it != std::sregex_iterator(); ++it)
      pts.emplace_back(std::stod((*it)[1]), std::stod((*it)[2]));
    return pts;
  };

  const std::string two = header + "1,0.5,0,0,0,10,10,10,0,6,1,20,0.5\n2,0.4,0,0,0,10,10,10,0,12,1,22,0.6\n";
  const auto p2 = plot_metrics(parse_metrics_csv(two, "m.csv"));
  CHECK(vertices(p2.svg, "series-psnr").size() == 2);
  CHECK(vertices(p2.svg, "series-loss").size() == 2);

  std::string rising = header;
  for (int k = 1; k <= 8; ++k)
    rising += std::to_string(k) + ",1,0,0,0,1,1,1,0," + std::to_string(10 * k) + ",1," + std::to_string(20 + k * k) + ",0.5\n";
  const auto pts = vertices(plot_metrics(parse_metrics_csv(rising, "m.csv")).svg, "series-psnr");
  REQUIRE(pts.size() == 8);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    CHECK(pts[k].first > pts[k - 1].first);
    CHECK(pts[k].second < pts[k - 1].second);  // SVG y grows downward
  }

  try {
    parse_metrics_csv(header + "1,0.5,0,0,0,10,10,10,0,6,1,,\n2,oops,0,0,0,10,10,10,0,12,1,,\n", "m.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.field() == "loss");
  }
  CHECK_THROWS_AS(parse_metrics_csv("step,loss\n", "m.csv"), ParseError);
}

TEST_CASE("command line: usage errors exit 2 with one line") {
  const fs::path d = scratch("usage");
  const Run bad = cli("train --bogus-flag", d);
  CHECK(bad.status == 2);
  CHECK(bad.err.rfind("error: ", 0) == 0);
  CHECK(std::count(bad.err.begin(), bad.err.end(), '\n') == 1);

  const Run missing = cli("train --config \"" + (d / "absent.json").string() + "\" --out \"" + d.string() + "\"", d);
  CHECK(missing.status == 2);
  CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);

  const fs::path scene = scratch("noimages");
  REQUIRE(cli("gen-scene --seed 1 --gaussians 4 --cameras 4 --width 8 --height 8 --out \"" + scene.string() + "\"", scene).status == 0);
  fs::remove_all(scene / "images");
  const Run noimg = cli("train --config \"" + (scene / "config.json").string() + "\" --out \"" + (scene / "run").string() + "\"", scene);
  CHECK(noimg.status == 2);
  CHECK(noimg.err.find("images") != std::string::npos);
  CHECK(std::count(noimg.err.begin(), noimg.err.end(), '\n') == 1);
}

TEST_CASE("command line: train, eval, render, score and simplify") {
  const fs::path& scene = trained_scene();
  const std::string cfg = " --config \"" + (scene / "config.json").string() + "\"";
  const fs::path run = scene / "run";
  const Run t = cli("train" + cfg + kSchedule + " --out \"" + run.string() + "\"", scene);
  REQUIRE(t.status == 0);
  for (const char* f : {"final.bzgs", "metrics.csv", "summary.json", "events.csv", "shards.csv", "counters.json", "report.csv", "cull.bin"})
    CHECK(fs::exists(run / f));
  const auto summary = nlohmann::json::parse(read_text(run / "summary.json"));
  CHECK(summary["steps"] == 30);
  CHECK(summary["counters"]["scoring_passes"] == 2);

  // Re-evaluating the final checkpoint reproduces the logged test PSNR.
  const Run e = cli("eval" + cfg + kSchedule + " --checkpoint \"" + (run / "final.bzgs").string() + "\" --split test", scene);
  REQUIRE(e.status == 0);
  std::smatch m;
  REQUIRE(std::regex_search(e.out, m, std::regex("mean_psnr ([-0-9.e+]+)")));
  CHECK(std::abs(std::stod(m[1]) - summary["mean_psnr"].get<double>()) < 1e-6);

  const fs::path renders = scene / "renders";
  REQUIRE(cli("render" + cfg + kSchedule + " --checkpoint \"" + (run / "final.bzgs").string() + "\" --out \"" + renders.string() + "\" --camera 0 --dump-tiles", scene).status == 0);
  CHECK(read_ppm(renders / "0.ppm").width == 24);
  CHECK(nlohmann::json::parse(read_text(renders / "0.tiles.json"))["tiles"].size() == 4);
  CHECK(cli("render" + cfg + " --checkpoint \"" + (run / "final.bzgs").string() + "\" --out \"" + renders.string() + "\" --camera 999", scene).status == 2);

  const fs::path scored = scene / "scored";
  REQUIRE(cli("score" + cfg + " --checkpoint \"" + (run / "final.bzgs").string() + "\" --out \"" + scored.string() + "\"", scene).status == 0);
  const auto blob = read_text(scored / "cull.bin");
  const std::vector<std::uint8_t> bytes(blob.begin(), blob.end());
  CHECK(CullMatrix::from_blob(bytes).rows() == load_checkpoint(run / "final.bzgs").model.size());

  // Mass cut at 1.0 keeps exactly the positive-score population.
  const fs::path simplified = scene / "simplified.bzgs";
  REQUIRE(cli("simplify" + cfg + " --checkpoint \"" + (run / "final.bzgs").string() + "\" --rule mass-cut --target-mass 1.0 --out \"" + simplified.string() + "\"", scene).status == 0);
  const TrainState before = load_checkpoint(run / "final.bzgs");
  const TrainState after = load_checkpoint(simplified);
  std::size_t positive = 0;
  {
    std::istringstream rows(read_text(scored / "report.csv"));
    std::string line;
    std::getline(rows, line);
    while (std::getline(rows, line)) {
      const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
      if (std::stod(line.substr(c1 + 1, c2 - c1 - 1)) > 0) ++positive;
    }
  }
  CHECK(after.model.size() == positive);
  CHECK(after.model.size() <= before.model.size());

  // Corrupt version byte.
  auto ckpt = read_text(run / "final.bzgs");
  ckpt[4] = char(42);
  write_text(scene / "future.bzgs", ckpt);
  const Run v = cli("eval" + cfg + " --checkpoint \"" + (scene / "future.bzgs").string() + "\"", scene);
  CHECK(v.status == 2);
  CHECK(v.err.rfind("error: version", 0) == 0);
}

TEST_CASE("command line: overrides equal file edits and ablations stay silent") {
  const fs::path& scene = trained_scene();
  const std::string cfg = " --config \"" + (scene / "config.json").string() + "\"";
  const fs::path a = scene / "ovr_a", b = scene / "ovr_b";
  REQUIRE(cli("train" + cfg + kSchedule + " --set m_ranks=2 --set seed=9 --out \"" + a.string() + "\"", scene).status == 0);

  auto doc = nlohmann::json::parse(read_text(scene / "config.json"));
  doc["m_ranks"] = 2;
  doc["seed"] = 9;
  write_text(scene / "edited.json", doc.dump(2));
  REQUIRE(cli("train --config \"" + (scene / "edited.json").string() + "\"" + kSchedule + " --out \"" + b.string() + "\"", scene).status == 0);
  CHECK(bytes_of(a / "final.bzgs") == bytes_of(b / "final.bzgs"));
  CHECK(bytes_of(a / "events.csv") == bytes_of(b / "events.csv"));
  const auto sa = nlohmann::json::parse(read_text(a / "summary.json"));
  const auto sb = nlohmann::json::parse(read_text(b / "summary.json"));
  CHECK(sa["config_hash"] == sb["config_hash"]);

  const fs::path off = scene / "noscore";
  REQUIRE(cli("train" + cfg + kSchedule + " --no-importance-scoring --out \"" + off.string() + "\"", scene).status == 0);
  CHECK(read_text(off / "events.csv").find("scoring_pass") == std::string::npos);
  CHECK(nlohmann::json::parse(read_text(off / "counters.json"))["scoring_passes"] == 0);
  CHECK_FALSE(fs::exists(off / "report.csv"));
}

TEST_CASE("command line: plot writes SVG and companion CSV") {
  const fs::path& scene = trained_scene();
  const fs::path d = scratch("plot");
  const std::string header = "step,loss,l1,ssim,scale_term,n_gaussians,active,visible,exchange_volume,wall_seconds,its_per_sec,test_psnr,test_ssim\n";
  write_text(d / "m.csv", header + "1,0.5,0,0,0,10,10,10,0,6,1,20,0.5\n");
  REQUIRE(cli("plot --metrics \"" + (d / "m.csv").string() + "\" --out \"" + (d / "p.svg").string() + "\"", d).status == 0);
  CHECK(read_text(d / "p.svg").find("</svg>") != std::string::npos);
  CHECK(fs::exists(d / "p.csv"));
  write_text(d / "bad.csv", header + "x\n");
  const Run bad = cli("plot --metrics \"" + (d / "bad.csv").string() + "\" --out \"" + (d / "q.svg").string() + "\"", d);
  CHECK(bad.status == 2);
  CHECK(bad.err.find(":2:") != std::string::npos);
  (void)scene;
}

TEST_CASE("command line: score rejects a scene without train cameras") {
  const fs::path& scene = trained_scene();
  const fs::path d = scratch("nocams");
  write_text(d / "cameras.json", "[]");
  auto doc = nlohmann::json::parse(read_text(scene / "config.json"));
  doc["cameras"] = (d / "cameras.json").string();
  doc["cloud"] = (scene / "points.ply").string();
  doc["images"] = (scene / "images").string();
  write_text(d / "config.json", doc.dump(2));
  const fs::path ckpt = scene / "run" / "final.bzgs";
  REQUIRE(fs::exists(ckpt));
  const Run r = cli("score --config \"" + (d / "config.json").string() + "\" --checkpoint \"" + ckpt.string() + "\" --out \"" + (d / "out").string() + "\"", d);
  CHECK(r.status == 2);
  CHECK(r.err.find("train camera") != std::string::npos);
}
