// Timing comparison of the OpenMP kernels against their serial reference
// implementations, with agreement checks on the computed values.

#include <chrono>
#include <cstdio>
#include <random>

#include "sgalign/geometry.hpp"
#include "sgalign/metrics.hpp"
#include "sgalign/reference.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<Eigen::Vector3d> random_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Eigen::Vector3d> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  return pts;
}

}  // namespace

int main() {
  std::printf("%-24s %10s %10s %8s  %s\n", "kernel", "serial ms", "openmp ms",
              "speedup", "agreement");

  {
    const int n = 4000, k = 8;
    sga::PointCloud cloud;
    cloud.points = random_cloud(n, 1);
    cloud.object_ids.assign(n, 0);

    auto t0 = Clock::now();
    auto serial = sga::ref::brute_force_knn_edges(cloud.points, k);
    double ts = ms_since(t0);

    t0 = Clock::now();
    auto parallel = sga::knn_edges(cloud, k);
    double tp = ms_since(t0);

    bool same = serial == parallel;
    std::printf("%-24s %10.1f %10.1f %7.1fx  %s\n", "knn_edges (n=4000,k=8)", ts,
                tp, ts / tp, same ? "exact" : "MISMATCH");
    if (!same) return 1;
  }

  {
    const int n = 20000;
    sga::PointCloud p, q;
    p.points = random_cloud(n, 2);
    q.points = random_cloud(n, 3);
    p.object_ids.assign(n, 0);
    q.object_ids.assign(n, 0);

    auto t0 = Clock::now();
    double serial = sga::ref::chamfer_serial(p.points, q.points);
    double ts = ms_since(t0);

    t0 = Clock::now();
    double parallel = sga::chamfer(p, q, sga::RigidTransform{});
    double tp = ms_since(t0);

    bool same = std::abs(serial - parallel) <= 1e-9 * std::max(1.0, serial);
    std::printf("%-24s %10.1f %10.1f %7.1fx  %s\n", "chamfer (n=20000)", ts, tp,
                ts / tp, same ? "within 1e-9" : "MISMATCH");
    if (!same) return 1;
  }

  return 0;
}
