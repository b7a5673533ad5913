#pragma once

#include "splatshard/scene.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace splatshard {

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> colors;  // in [0, 1]; mid-grey when the file has no colour
  bool has_color = false;
};

/// ASCII PLY, vertex element with x y z and optional red green blue; other properties skipped.
PointCloud read_ply(const std::filesystem::path& path);
PointCloud parse_ply(std::istream& in, const std::string& source);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

std::vector<Camera> read_cameras(const std::filesystem::path& path);
std::vector<Camera> parse_cameras(const std::string& text, const std::string& source);
std::string cameras_to_json(const std::vector<Camera>& cameras);
void write_cameras(const std::filesystem::path& path, const std::vector<Camera>& cameras);

/// Binary P6 with maxval 255, values mapped to [0, 1].
Image<float> read_ppm(const std::filesystem::path& path);
/// Values clamped to [0, 1] and rounded to 8 bits.
template <typename Scalar>
void write_ppm(const std::filesystem::path& path, const Image<Scalar>& image);

std::filesystem::path image_path(const std::filesystem::path& images_dir, int camera_id);

/// One Gaussian per cloud point; every train camera needs `<id>.ppm` in images_dir. Test images
/// are loaded when present.
Scene load_scene(const std::filesystem::path& cloud_path, const std::filesystem::path& cameras_path,
                 const std::filesystem::path& images_dir);

/// Writes points.ply, cameras.json and images/<id>.ppm under dir.
void save_scene_files(const std::filesystem::path& dir, const PointCloud& cloud,
                      const std::vector<Camera>& cameras, const std::map<int, Image<float>>& images);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace splatshard
