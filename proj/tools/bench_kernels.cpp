// Times the serial reference kernels against the OpenMP ones and verifies
// they produce bitwise-identical results while doing so.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "mqtts/kernels.hpp"
#include "mqtts/rng.hpp"

namespace K = mqtts::kernels;
using K::Index;

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

template <typename Fn>
double time_best(Fn&& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    double t0 = now_s();
    fn();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

bool same(const std::vector<double>& a, const std::vector<double>& b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Case {
  std::string name;
  double flops;
  double t_serial;
  double t_omp;
  bool bitwise;
};

Case bench_gemm(const char* name, Index m, Index n, Index k, int reps) {
  mqtts::Rng rng(1);
  std::vector<double> a(static_cast<std::size_t>(m * k)), b(static_cast<std::size_t>(k * n));
  for (double& x : a) x = rng.normal();
  for (double& x : b) x = rng.normal();
  std::vector<double> c1(static_cast<std::size_t>(m * n)), c2(c1.size());
  Case out;
  out.name = name;
  out.flops = 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k);
  out.t_serial = time_best([&] { K::serial::gemm(false, false, m, n, k, a.data(), b.data(), c1.data(), false); }, reps);
  out.t_omp = time_best([&] { K::omp::gemm(false, false, m, n, k, a.data(), b.data(), c2.data(), false); }, reps);
  out.bitwise = same(c1, c2);
  return out;
}

Case bench_frame_gather(int reps) {
  mqtts::Rng rng(2);
  Index len = 65536, ch = 32, kernel = 8, stride = 4, pad = 2;
  Index rows = (len + stride - 1) / stride;
  std::vector<double> in(static_cast<std::size_t>(len * ch));
  for (double& x : in) x = rng.normal();
  std::vector<double> o1(static_cast<std::size_t>(rows * kernel * ch)), o2(o1.size());
  Case out;
  out.name = "frame_gather 65536x32 k8 s4";
  out.flops = static_cast<double>(rows * kernel * ch);  // copies, not flops; reported as elems
  out.t_serial = time_best([&] { K::serial::frame_gather(in.data(), len, ch, kernel, stride, pad, rows, o1.data()); }, reps);
  out.t_omp = time_best([&] { K::omp::frame_gather(in.data(), len, ch, kernel, stride, pad, rows, o2.data()); }, reps);
  out.bitwise = same(o1, o2);
  return out;
}

Case bench_nearest(int reps) {
  mqtts::Rng rng(3);
  Index t = 4096, groups = 4, gdim = 8, k = 160;
  std::vector<double> z(static_cast<std::size_t>(t * groups * gdim));
  std::vector<double> books(static_cast<std::size_t>(groups * k * gdim));
  for (double& x : z) x = rng.normal();
  for (double& x : books) x = rng.normal();
  std::vector<std::int32_t> c1(static_cast<std::size_t>(t * groups)), c2(c1.size());
  Case out;
  out.name = "nearest_codes 4096 frames K160";
  out.flops = 3.0 * static_cast<double>(t * groups * k * gdim);
  out.t_serial = time_best([&] { K::serial::nearest_codes(z.data(), t, groups, gdim, books.data(), k, c1.data()); }, reps);
  out.t_omp = time_best([&] { K::omp::nearest_codes(z.data(), t, groups, gdim, books.data(), k, c2.data()); }, reps);
  out.bitwise = std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(std::int32_t)) == 0;
  return out;
}

Case bench_softmax(int reps) {
  mqtts::Rng rng(4);
  Index rows = 2048, cols = 512;
  std::vector<double> x(static_cast<std::size_t>(rows * cols));
  for (double& v : x) v = rng.normal();
  std::vector<double> y1(x.size()), y2(x.size());
  Case out;
  out.name = "softmax_rows 2048x512";
  out.flops = 5.0 * static_cast<double>(rows * cols);
  out.t_serial = time_best([&] { K::serial::softmax_rows(x.data(), rows, cols, y1.data()); }, reps);
  out.t_omp = time_best([&] { K::omp::softmax_rows(x.data(), rows, cols, y2.data()); }, reps);
  out.bitwise = same(y1, y2);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 3;
  if (argc > 1) reps = std::atoi(argv[1]);
  std::printf("threads available: %d\n", K::max_threads());
  std::printf("%-32s %12s %12s %8s %10s %s\n", "kernel", "serial(ms)", "omp(ms)", "speedup",
              "GFLOP/s", "bitwise");
  std::vector<Case> cases;
  cases.push_back(bench_gemm("gemm 256x256x256", 256, 256, 256, reps));
  cases.push_back(bench_gemm("gemm 64x513x1024 (mel dft)", 64, 513, 1024, reps));
  cases.push_back(bench_gemm("gemm 512x256x288 (conv)", 512, 256, 288, reps));
  cases.push_back(bench_frame_gather(reps));
  cases.push_back(bench_nearest(reps));
  cases.push_back(bench_softmax(reps));
  bool all_bitwise = true;
  for (const Case& c : cases) {
    all_bitwise = all_bitwise && c.bitwise;
    std::printf("%-32s %12.3f %12.3f %8.2f %10.2f %s\n", c.name.c_str(), c.t_serial * 1e3,
                c.t_omp * 1e3, c.t_serial / c.t_omp, c.flops / c.t_omp * 1e-9,
                c.bitwise ? "yes" : "NO");
  }
  if (!all_bitwise) {
    std::printf("mismatch between serial and omp kernels\n");
    return 1;
  }
  return 0;
}
