#include "support.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/sh.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <map>
#include <set>

using namespace splatshard;
using namespace testsupport;

TEST_CASE("covariance of axis-aligned Gaussians") {
  Gaussian g;
  g.rotation() << 1, 0, 0, 0;
  CHECK(covariance_of(g).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  g.log_scale() << std::log(2.0), 0, 0;
  const Eigen::Matrix3d expected = Eigen::Vector3d(4, 1, 1).asDiagonal();
  CHECK((covariance_of(g) - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("covariance eigenvalues are the squared scales for random rotations") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Gaussian g = random_gaussian(rng);
    const Eigen::Matrix3d sigma = covariance_of(g);
    CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sigma);
    std::vector<double> got(eig.eigenvalues().data(), eig.eigenvalues().data() + 3);
    std::vector<double> want;
    for (int k = 0; k < 3; ++k) want.push_back(std::exp(2 * g.log_scale()[k]));
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    for (int k = 0; k < 3; ++k) CHECK(got[std::size_t(k)] == doctest::Approx(want[std::size_t(k)]).epsilon(1e-9));
    // SPD: Cholesky succeeds and the determinant is positive.
    CHECK(Eigen::LLT<Eigen::Matrix3d>(sigma).info() == Eigen::Success);
    CHECK(sigma.determinant() > 0);
  }
}

TEST_CASE("rotation of an unnormalised quaternion is orthonormal") {
  const Eigen::Matrix3d r = rotation_from_quaternion<double>(Eigen::Vector4d(2, 1, -1, 0.5));
  CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(r.determinant() == doctest::Approx(1.0));
}

TEST_CASE("cloud initialisation") {
  std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0, 0, 3}, {5, 5, 5}};
  std::vector<Eigen::Vector3d> cols(pts.size(), Eigen::Vector3d(0.2, 0.4, 0.6));
  const auto model = initialize_from_cloud(pts, cols);
  REQUIRE(model.size() == pts.size());
  // Independent mean of the three nearest neighbour distances.
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (j != i) d.push_back((pts[i] - pts[j]).norm());
    std::sort(d.begin(), d.end());
    const double expect = std::clamp((d[0] + d[1] + d[2]) / 3.0, 1e-4, 1.0);
    for (int k = 0; k < 3; ++k) CHECK(model[i].scale()[k] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(model[i].opacity() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(model[i].rotation() == Eigen::Vector4d(1, 0, 0, 0));
    CHECK(model[i].position() == pts[i]);
    CHECK(sh0_to_rgb(model[i].sh().row(0).transpose()).isApprox(cols[i], 1e-12));
  }
}

TEST_CASE("LOD labels: single level and first-occupant rule") {
  std::vector<Eigen::Vector3d> pts{{0.1, 0.1, 0.1}, {0.9, 0.9, 0.9}, {0.2, 0.2, 0.2}};
  auto model = initialize_from_cloud(pts, std::vector<Eigen::Vector3d>(3, Eigen::Vector3d::Constant(0.5)));
  assign_lod_labels(model, 1, 1.0);
  for (const auto& g : model) CHECK(g.lod_level == 0);

  // Same level-0 voxel (size 1), different level-1 voxels (size 0.5).
  std::vector<Eigen::Vector3d> two{{0.1, 0.1, 0.1}, {0.9, 0.9, 0.9}};
  auto m2 = initialize_from_cloud(two, std::vector<Eigen::Vector3d>(2, Eigen::Vector3d::Constant(0.5)));
  assign_lod_labels(m2, 2, 1.0);
  CHECK(m2[0].lod_level == 0);
  CHECK(m2[1].lod_level == 1);
}

TEST_CASE("LOD labels on a grid match a brute-force voxeliser") {
  std::vector<Eigen::Vector3d> pts;
  const double spacing = 0.1;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      for (int k = 0; k < 10; ++k) pts.push_back(Eigen::Vector3d(i, j, k) * spacing);
  auto model = initialize_from_cloud(pts, std::vector<Eigen::Vector3d>(pts.size(), Eigen::Vector3d::Constant(0.5)));
  const int levels = 3;
  const double base = 5 * spacing;
  assign_lod_labels(model, levels, base);

  // O(N^2) oracle: the coarsest level at which no lower id shares the voxel.
  auto cell = [](const Eigen::Vector3d& p, double v) {
    return std::array<long long, 3>{(long long)std::floor(p.x() / v), (long long)std::floor(p.y() / v),
                                    (long long)std::floor(p.z() / v)};
  };
  std::map<int, int> want, got;
  int total = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    int level = levels - 1;
    for (int k = 0; k < levels; ++k) {
      const double v = base / std::pow(2.0, k);
      bool first = true;
      for (std::size_t j = 0; j < i && first; ++j) first = cell(pts[j], v) != cell(pts[i], v);
      if (first) {
        level = k;
        break;
      }
    }
    ++want[level];
    ++got[model[i].lod_level];
    ++total;
    CHECK(model[i].lod_level == level);
  }
  CHECK(want == got);
  int sum = 0;
  for (auto [k, n] : got) sum += n;
  CHECK(sum == total);
}

TEST_CASE("reference distance is invariant to camera order") {
  const auto fx = small_fixture(3, 20, 9, 16);
  std::vector<Camera> cams = fx.scene.cameras;
  const double d0 = reference_distance(fx.scene.gaussians, cams);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(cams.begin(), cams.end(), rng);
    CHECK(reference_distance(fx.scene.gaussians, cams) == d0);
  }
  CHECK(fx.scene.d0 == d0);
}

TEST_CASE("fixture generation is reproducible") {
  const auto a = gen_fixture_scene(1, 12, 5, 24, 20);
  const auto b = gen_fixture_scene(1, 12, 5, 24, 20);
  REQUIRE(a.scene.gaussians.size() == b.scene.gaussians.size());
  for (std::size_t i = 0; i < a.scene.gaussians.size(); ++i) {
    CHECK(a.scene.gaussians[i].params == b.scene.gaussians[i].params);
    CHECK(a.ground_truth[i].params == b.ground_truth[i].params);
  }
  for (const auto& [id, img] : a.scene.images) CHECK((img.rgb == b.scene.images.at(id).rgb).all());
  const auto c = gen_fixture_scene(2, 12, 5, 24, 20);
  CHECK(c.ground_truth[0].params != a.ground_truth[0].params);
}

TEST_CASE("test split rule") {
  const auto fx = gen_fixture_scene(1, 4, 2, 8, 8);
  CHECK(fx.scene.train_camera_indices().size() == 1);
  CHECK(fx.scene.test_camera_indices().size() == 1);
  CHECK(fx.scene.cameras[1].role == CameraRole::Test);
  CHECK(default_test_count(24) == 3);
  CHECK(default_test_count(10) == 1);
  CHECK(default_test_count(11) == 2);
  const auto explicit_split = gen_fixture_scene(1, 4, 24, 8, 8, FixtureOptions{.test_count = 4});
  CHECK(explicit_split.scene.test_camera_indices().size() == 4);
}

TEST_CASE("camera validation rejects a bad rotation") {
  Camera c = simple_camera(0, 16, 16);
  CHECK_NOTHROW(c.validate());
  c.world_to_camera(0, 0) = 2;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  Camera d = simple_camera(0, 16, 16);
  d.fx = -1;
  CHECK_THROWS_AS(d.validate(), ContractViolation);
}

TEST_CASE("look_at produces a camera that sees the target on the optical axis") {
  const Eigen::Vector3d eye(2, -1, 3);
  const auto m = look_at(eye, Eigen::Vector3d::Zero());
  const Eigen::Matrix3d r = m.leftCols<3>();
  CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::Vector3d p = r * Eigen::Vector3d::Zero() + m.col(3);
  CHECK(std::abs(p.x()) < 1e-12);
  CHECK(std::abs(p.y()) < 1e-12);
  CHECK(p.z() == doctest::Approx(eye.norm()));
}
