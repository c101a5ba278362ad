#include "mqtts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mqtts/error.hpp"
#include "mqtts/wada_table.hpp"

namespace mqtts {

namespace {

double row_distance(const Mat& a, Index i, const Mat& b, Index j) {
  double s = 0.0;
  for (Index c = 0; c < a.cols; ++c) {
    double d = a.at(i, c) - b.at(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

DtwResult dtw(const Mat& a, const Mat& b) {
  if (a.rows == 0 || b.rows == 0) fail(ErrorKind::input, "dtw: empty sequence");
  if (a.cols != b.cols) {
    fail(ErrorKind::dimension, "dtw: frame dimensions differ: " + std::to_string(a.cols) +
                                   " vs " + std::to_string(b.cols));
  }
  const Index n = a.rows, m = b.rows;
  // DP over (summed cost, path length), minimized lexicographically. The
  // candidate set is invariant under transposing the lattice, so the optimum
  // and therefore the mean cost are symmetric in (a, b).
  Mat sum(n, m);
  std::vector<Index> len(static_cast<std::size_t>(n * m));
  std::vector<signed char> step(static_cast<std::size_t>(n * m));  // 0 diag, 1 up, 2 left
  auto l = [&](Index i, Index j) -> Index& { return len[static_cast<std::size_t>(i * m + j)]; };
  auto st = [&](Index i, Index j) -> signed char& {
    return step[static_cast<std::size_t>(i * m + j)];
  };
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      double d = row_distance(a, i, b, j);
      if (i == 0 && j == 0) {
        sum.at(0, 0) = d;
        l(0, 0) = 1;
        st(0, 0) = -1;
        continue;
      }
      double best_s = std::numeric_limits<double>::infinity();
      Index best_l = 0;
      signed char best_step = -1;
      auto consider = [&](Index pi, Index pj, signed char s_code) {
        if (pi < 0 || pj < 0) return;
        double cs = sum.at(pi, pj);
        Index cl = l(pi, pj);
        if (cs < best_s || (cs == best_s && cl < best_l)) {
          best_s = cs;
          best_l = cl;
          best_step = s_code;
        }
      };
      consider(i - 1, j - 1, 0);
      consider(i - 1, j, 1);
      consider(i, j - 1, 2);
      sum.at(i, j) = best_s + d;
      l(i, j) = best_l + 1;
      st(i, j) = best_step;
    }
  }
  DtwResult r;
  r.total_cost = sum.at(n - 1, m - 1);
  r.pairs = l(n - 1, m - 1);
  r.mean_cost = r.total_cost / static_cast<double>(r.pairs);
  Index i = n - 1, j = m - 1;
  r.path.reserve(static_cast<std::size_t>(r.pairs));
  while (true) {
    r.path.emplace_back(i, j);
    signed char s = st(i, j);
    if (s < 0) break;
    if (s == 0) {
      --i;
      --j;
    } else if (s == 1) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

Mat mcep_sequence(const Waveform& w) {
  MelConfig cfg;
  cfg.bands = 40;
  cfg.win = 1024;
  cfg.hop = 256;
  cfg.sample_rate = w.sample_rate;
  cfg.fmax = 0.5 * w.sample_rate;
  MelExtractor ex(cfg);
  Mat mel = ex.log_mel(w);

  const Index bands = cfg.bands;
  const Index ncep = 23;
  constexpr double pi = 3.14159265358979323846;
  Mat out(mel.rows, ncep);
  double s = std::sqrt(2.0 / static_cast<double>(bands));
  for (Index t = 0; t < mel.rows; ++t) {
    for (Index k = 1; k <= ncep; ++k) {
      double acc = 0.0;
      for (Index b = 0; b < bands; ++b) {
        acc += mel.at(t, b) * std::cos(pi * static_cast<double>(k) *
                                       (2.0 * static_cast<double>(b) + 1.0) /
                                       (2.0 * static_cast<double>(bands)));
      }
      out.at(t, k - 1) = s * acc;
    }
  }
  return out;
}

double mcd(const Waveform& ref, const Waveform& syn) {
  return dtw(mcep_sequence(ref), mcep_sequence(syn)).mean_cost;
}

void sym_eig(const Mat& sym, std::vector<double>& vals, Mat& vecs) {
  if (sym.rows != sym.cols) fail(ErrorKind::dimension, "sym_eig: matrix must be square");
  const Index n = sym.rows;
  Mat a = sym;
  vecs = Mat(n, n);
  for (Index i = 0; i < n; ++i) vecs.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-26 * (1.0 + std::abs(a.at(0, 0)))) break;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (apq == 0.0) continue;
        double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (Index k = 0; k < n; ++k) {
          double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          double vkp = vecs.at(k, p), vkq = vecs.at(k, q);
          vecs.at(k, p) = c * vkp - s * vkq;
          vecs.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  vals.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = a.at(i, i);
}

namespace {

// V diag(sqrt(max(vals, 0))) V^T
Mat psd_sqrt(const Mat& sym) {
  std::vector<double> vals;
  Mat v;
  sym_eig(sym, vals, v);
  const Index n = sym.rows;
  Mat r(n, n);
  for (std::size_t e = 0; e < vals.size(); ++e) {
    double lam = vals[e] > 0.0 ? std::sqrt(vals[e]) : 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        r.at(i, j) += lam * v.at(i, static_cast<Index>(e)) * v.at(j, static_cast<Index>(e));
  }
  return r;
}

void mean_and_cov(const Mat& x, double scale, std::vector<double>& mu, Mat& cov) {
  const Index m = x.rows, d = x.cols;
  mu.assign(static_cast<std::size_t>(d), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += x.at(i, j) * scale;
  for (double& v : mu) v /= static_cast<double>(m);
  cov = Mat(d, d);
  for (Index i = 0; i < m; ++i) {
    for (Index a = 0; a < d; ++a) {
      double da = x.at(i, a) * scale - mu[static_cast<std::size_t>(a)];
      for (Index b = 0; b < d; ++b) {
        double db = x.at(i, b) * scale - mu[static_cast<std::size_t>(b)];
        cov.at(a, b) += da * db;
      }
    }
  }
  for (double& v : cov.v) v /= static_cast<double>(m - 1);
}

}  // namespace

double frechet_distance(const Mat& real, const Mat& fake, double scale) {
  if (real.cols != fake.cols) {
    fail(ErrorKind::dimension, "frechet: embedding dimensions differ: " +
                                   std::to_string(real.cols) + " vs " + std::to_string(fake.cols));
  }
  if (real.rows < 2 || fake.rows < 2) {
    fail(ErrorKind::input, "frechet: need at least 2 embeddings per set");
  }
  for (double v : real.v)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "frechet: non-finite embedding");
  for (double v : fake.v)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "frechet: non-finite embedding");

  std::vector<double> mu1, mu2;
  Mat c1, c2;
  mean_and_cov(real, scale, mu1, c1);
  mean_and_cov(fake, scale, mu2, c2);
  for (double v : c1.v)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "frechet: non-finite covariance");
  for (double v : c2.v)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "frechet: non-finite covariance");

  const Index d = real.cols;
  double mean_term = 0.0;
  for (Index j = 0; j < d; ++j) {
    double dm = mu1[static_cast<std::size_t>(j)] - mu2[static_cast<std::size_t>(j)];
    mean_term += dm * dm;
  }
  double tr1 = 0.0, tr2 = 0.0;
  for (Index j = 0; j < d; ++j) {
    tr1 += c1.at(j, j);
    tr2 += c2.at(j, j);
  }

  // Tr((C1 C2)^1/2) = Tr((S C2 S)^1/2) with S = C1^1/2; the inner product is
  // symmetrized before decomposition to shed rounding asymmetry.
  Mat s = psd_sqrt(c1);
  Mat inner(d, d);
  Mat tmp(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) {
      double acc = 0.0;
      for (Index k = 0; k < d; ++k) acc += s.at(i, k) * c2.at(k, j);
      tmp.at(i, j) = acc;
    }
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) {
      double acc = 0.0;
      for (Index k = 0; k < d; ++k) acc += tmp.at(i, k) * s.at(k, j);
      inner.at(i, j) = acc;
    }
  for (Index i = 0; i < d; ++i)
    for (Index j = i + 1; j < d; ++j) {
      double avg = 0.5 * (inner.at(i, j) + inner.at(j, i));
      inner.at(i, j) = avg;
      inner.at(j, i) = avg;
    }
  std::vector<double> vals;
  Mat vecs;
  sym_eig(inner, vals, vecs);
  double tr_sqrt = 0.0;
  for (double v : vals) tr_sqrt += v > 0.0 ? std::sqrt(v) : 0.0;

  double out = mean_term + tr1 + tr2 - 2.0 * tr_sqrt;
  return out > 0.0 ? out : 0.0;
}

double speaker_similarity(std::span<const double> e1, std::span<const double> e2) {
  if (e1.size() != e2.size()) fail(ErrorKind::dimension, "sss: embedding sizes differ");
  if (e1.empty()) fail(ErrorKind::input, "sss: empty embedding");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    dot += e1[i] * e2[i];
    n1 += e1[i] * e1[i];
    n2 += e2[i] * e2[i];
  }
  if (n1 == 0.0 || n2 == 0.0) fail(ErrorKind::input, "sss: zero embedding vector");
  return dot / (std::sqrt(n1) * std::sqrt(n2));
}

double wada_snr(const Waveform& x) {
  double sum_abs = 0.0, sum_log = 0.0;
  Index n = 0;
  for (double v : x.samples) {
    if (v == 0.0) continue;  // silence padding carries no amplitude information
    double a = std::abs(v);
    sum_abs += a;
    sum_log += std::log(a);
    ++n;
  }
  if (n == 0) fail(ErrorKind::input, "wada_snr: all-zero waveform");
  double g = std::log(sum_abs / static_cast<double>(n)) - sum_log / static_cast<double>(n);

  if (g <= wada::kGTable[0]) return wada::kSnrMin;
  if (g >= wada::kGTable[wada::kTableSize - 1]) return wada::kSnrMax;
  int i = 0;
  while (i + 1 < wada::kTableSize && wada::kGTable[i + 1] < g) ++i;
  double frac = (g - wada::kGTable[i]) / (wada::kGTable[i + 1] - wada::kGTable[i]);
  return wada::kSnrMin + (static_cast<double>(i) + frac) * wada::kSnrStep;
}

std::vector<double> pitch_contour(const Waveform& x) {
  const int sr = x.sample_rate;
  const Index win = sr / 40;       // 25 ms
  const Index hop = sr / 100;      // 10 ms
  const Index lag_min = std::max<Index>(2, sr / 400);  // 400 Hz ceiling
  const Index lag_max = sr / 60;   // 60 Hz floor
  const double voicing_threshold = 0.5;
  const double rms_gate = 1e-3;

  const Index len = static_cast<Index>(x.samples.size());
  if (len < win) return {};
  const Index frames = (len - win) / hop + 1;
  std::vector<double> f0(static_cast<std::size_t>(frames), 0.0);
  std::vector<double> frame(static_cast<std::size_t>(win));
  std::vector<double> r(static_cast<std::size_t>(lag_max) + 2, 0.0);

  for (Index t = 0; t < frames; ++t) {
    const double* src = x.samples.data() + t * hop;
    double mean = 0.0;
    for (Index i = 0; i < win; ++i) mean += src[i];
    mean /= static_cast<double>(win);
    double energy = 0.0;
    for (Index i = 0; i < win; ++i) {
      frame[static_cast<std::size_t>(i)] = src[i] - mean;
      energy += frame[static_cast<std::size_t>(i)] * frame[static_cast<std::size_t>(i)];
    }
    if (std::sqrt(energy / static_cast<double>(win)) < rms_gate || energy == 0.0) continue;

    Index top = std::min(lag_max + 1, win - 1);
    for (Index lag = lag_min - 1; lag <= top; ++lag) {
      double acc = 0.0;
      for (Index i = 0; i + lag < win; ++i) {
        acc += frame[static_cast<std::size_t>(i)] * frame[static_cast<std::size_t>(i + lag)];
      }
      // per-lag normalization removes the linear taper of the summed estimate,
      // which would otherwise bias the peak toward shorter lags
      r[static_cast<std::size_t>(lag)] =
          acc / static_cast<double>(win - lag) / (energy / static_cast<double>(win));
    }
    const Index hi = std::min(lag_max, win - 2);
    Index best = lag_min;
    for (Index lag = lag_min; lag <= hi; ++lag) {
      if (r[static_cast<std::size_t>(lag)] > r[static_cast<std::size_t>(best)]) best = lag;
    }
    double pmax = r[static_cast<std::size_t>(best)];
    if (pmax < voicing_threshold) continue;
    // Prefer the shortest lag whose local peak rivals the global one; the
    // period's multiples score just as high and would halve the estimate.
    for (Index lag = lag_min; lag <= hi; ++lag) {
      double v = r[static_cast<std::size_t>(lag)];
      if (v >= 0.9 * pmax && v >= r[static_cast<std::size_t>(lag) - 1] &&
          v >= r[static_cast<std::size_t>(lag) + 1]) {
        best = lag;
        break;
      }
    }
    double peak = r[static_cast<std::size_t>(best)];

    double rm = r[static_cast<std::size_t>(best) - 1];
    double rp = r[static_cast<std::size_t>(best) + 1];
    double denom = rm - 2.0 * peak + rp;
    double delta = denom != 0.0 ? 0.5 * (rm - rp) / denom : 0.0;
    if (delta < -0.5) delta = -0.5;
    if (delta > 0.5) delta = 0.5;
    f0[static_cast<std::size_t>(t)] = static_cast<double>(sr) / (static_cast<double>(best) + delta);
  }
  return f0;
}

}  // namespace mqtts
