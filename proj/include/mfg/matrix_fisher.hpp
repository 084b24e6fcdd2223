#pragma once

// Matrix Fisher distribution on SO(3): normalizing constant with first and
// second derivatives, moments of Q = U^T R V up to third order by
// deterministic quadrature, density, mode, and exact samplers.
//
// Quadrature strategy: the moments only depend on the diagonal concentration
// S. Two coordinate charts are used.
//  - Dispersed chart: Euler angles about the axis carrying the largest |s_k|
//    (which minimizes the bandwidth of the two periodic angles), trapezoid in
//    the periodic angles and Gauss-Legendre in the polar cosine.
//  - Concentrated chart: when every pair sum s_j + s_k is large the density
//    lives near Q = I; exponential coordinates on a truncated box make the
//    node count independent of concentration.
// Both charts refine on a geometric ladder until successive levels agree to
// the requested tolerance; converged levels are remembered per regime so the
// filter does not pay for re-confirmation at every step.

#include <mfg/so3.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mfg {
namespace fisher {

struct QuadratureOptions {
  double rel_tol = 1e-8;
  bool use_level_hints = true;  // reuse converged refinement levels per regime
  int max_extra_levels = 10;
};

namespace detail {

// ---- Gauss-Legendre nodes on [-1, 1], cached by order -----------------

inline const std::vector<std::pair<double, double>>& gl_rule(int n) {
  static std::mutex mu;
  static std::map<int, std::vector<std::pair<double, double>>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::pair<double, double>> rule(n);
  for (int k = 0; k < (n + 1) / 2; ++k) {
    double x = std::cos(M_PI * (k + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    rule[k] = {-x, w};
    rule[n - 1 - k] = {x, w};
  }
  auto res = cache.emplace(n, std::move(rule));
  return res.first->second;
}

// Geometric ladder of quadrature orders; levels index into this grid so that
// rules are shared across calls.
inline int grid_order(int level, int base, bool even) {
  double v = base * std::pow(1.5, level);
  int n = static_cast<int>(std::ceil(v));
  if (even && (n % 2)) ++n;
  return n;
}

inline int level_at_least(double target, int base) {
  int lvl = 0;
  double v = base;
  while (v < target && lvl < 60) {
    v *= 1.5;
    ++lvl;
  }
  return lvl;
}

// ---- parity-pruned index tables ---------------------------------------

// For diagonal S the density is invariant under Q -> DQD with D one of the
// four det +1 sign matrices, so E[prod Q_{i_t j_t}] vanishes unless every
// index value appears an even number of times across all row and column
// slots.

inline bool parity_valid(std::initializer_list<int> flat) {
  int cnt[3] = {0, 0, 0};
  for (int f : flat) {
    ++cnt[f / 3];
    ++cnt[f % 3];
  }
  return cnt[0] % 2 == 0 && cnt[1] % 2 == 0 && cnt[2] % 2 == 0;
}

struct IndexTables {
  std::vector<std::array<int, 2>> pairs;    // canonical a <= b
  std::array<int, 81> pair_slot;            // (a,b) -> canonical slot or -1
  std::vector<std::array<int, 3>> triples;  // canonical a <= b <= c
  std::vector<int> triple_slot;             // 729 entries -> slot or -1
  std::vector<int> pair_packed;               // per pair slot: packed a<=b index
  std::vector<std::array<int, 2>> triple_pc;  // per triple: (packed (a,b), c)

  static int packed(int a, int b) { return a * 9 - a * (a + 1) / 2 + b; }

  IndexTables() : triple_slot(729, -1) {
    pair_slot.fill(-1);
    std::map<std::array<int, 2>, int> pm;
    for (int a = 0; a < 9; ++a)
      for (int b = a; b < 9; ++b)
        if (parity_valid({a, b})) {
          pm[{a, b}] = static_cast<int>(pairs.size());
          pairs.push_back({a, b});
          pair_packed.push_back(packed(a, b));
        }
    for (int a = 0; a < 9; ++a)
      for (int b = 0; b < 9; ++b) {
        const std::array<int, 2> key{std::min(a, b), std::max(a, b)};
        auto it = pm.find(key);
        if (it != pm.end()) pair_slot[a * 9 + b] = it->second;
      }
    std::map<std::array<int, 3>, int> tm;
    for (int a = 0; a < 9; ++a)
      for (int b = a; b < 9; ++b)
        for (int c = b; c < 9; ++c)
          if (parity_valid({a, b, c})) {
            tm[{a, b, c}] = static_cast<int>(triples.size());
            triples.push_back({a, b, c});
            triple_pc.push_back({packed(a, b), c});
          }
    for (int a = 0; a < 9; ++a)
      for (int b = 0; b < 9; ++b)
        for (int c = 0; c < 9; ++c) {
          std::array<int, 3> key{a, b, c};
          std::sort(key.begin(), key.end());
          auto it = tm.find(key);
          if (it != tm.end()) triple_slot[(a * 9 + b) * 9 + c] = it->second;
        }
  }
};

inline const IndexTables& index_tables() {
  static const IndexTables t;
  return t;
}

}  // namespace detail

// ---- moment data -------------------------------------------------------

struct MomentData {
  int order = 0;
  double log_c = 0.0;
  Mat3 first = Mat3::Zero();  // E[Q_ij]; off-diagonals vanish by parity
  std::shared_ptr<const std::array<double, 81>> second;
  std::shared_ptr<const std::array<double, 729>> third;
};

class QMomentTable {
 public:
  explicit QMomentTable(MomentData d) : d_(std::move(d)) {}
  int order() const { return d_.order; }
  double log_c() const { return d_.log_c; }
  const Mat3& first_matrix() const { return d_.first; }
  double first(int i, int j) const { return d_.first(i, j); }
  double second(int i, int j, int k, int l) const {
    return (*d_.second)[(i * 3 + j) * 9 + (k * 3 + l)];
  }
  double third(int i, int j, int k, int l, int m, int n) const {
    return (*d_.third)[((i * 3 + j) * 9 + (k * 3 + l)) * 9 + (m * 3 + n)];
  }
  bool has_second() const { return d_.second != nullptr; }
  bool has_third() const { return d_.third != nullptr; }
  // flat row-major views for vectorized contractions
  const double* second_data() const { return d_.second->data(); }
  const double* third_data() const { return d_.third->data(); }

 private:
  MomentData d_;
};

namespace detail {

struct Accumulator {
  int order;
  double c = 0.0;
  std::array<double, 3> diag{};  // E[Q_ii] * c
  // dense accumulators chosen for vectorized rank-1 updates; canonical
  // extraction happens once in finalize()
  Eigen::Matrix<double, 9, 9> m2full;   // sum w q_a q_b
  Eigen::Matrix<double, 45, 9> m3full;  // sum w (q_a q_b)_{a<=b} q_c

  explicit Accumulator(int ord) : order(ord) {
    m2full.setZero();
    m3full.setZero();
  }

  inline void add(const double* q, double w) {
    c += w;
    diag[0] += w * q[0];
    diag[1] += w * q[4];
    diag[2] += w * q[8];
    if (order >= 2) {
      Eigen::Map<const Eigen::Matrix<double, 9, 1>> qv(q);
      const Eigen::Matrix<double, 9, 1> wq = w * qv;
      m2full.noalias() += wq * qv.transpose();
      if (order >= 3) {
        Eigen::Matrix<double, 45, 1> pp;
        int idx = 0;
        for (int a = 0; a < 9; ++a) {
          const double qa = q[a];
          for (int b = a; b < 9; ++b) pp[idx++] = qa * q[b];
        }
        m3full.noalias() += (w * pp) * qv.transpose();
      }
    }
  }

  // perm maps internal axis index to external axis index.
  MomentData finalize(double exponent_shift, const std::array<int, 3>& perm) const {
    MomentData out;
    out.order = order;
    out.log_c = std::log(c) + exponent_shift;
    const auto& t = index_tables();
    for (int i = 0; i < 3; ++i) out.first(perm[i], perm[i]) = diag[i] / c;
    auto ext = [&perm](int flat) {
      return perm[flat / 3] * 3 + perm[flat % 3];
    };
    if (order >= 2) {
      auto sec = std::make_shared<std::array<double, 81>>();
      sec->fill(0.0);
      for (int a = 0; a < 9; ++a)
        for (int b = 0; b < 9; ++b) {
          if (t.pair_slot[a * 9 + b] < 0) continue;  // vanishes by parity
          (*sec)[ext(a) * 9 + ext(b)] =
              m2full(std::min(a, b), std::max(a, b)) / c;
        }
      out.second = std::move(sec);
    }
    if (order >= 3) {
      auto thr = std::make_shared<std::array<double, 729>>();
      thr->fill(0.0);
      for (int a = 0; a < 9; ++a)
        for (int b = 0; b < 9; ++b)
          for (int cc = 0; cc < 9; ++cc) {
            if (t.triple_slot[(a * 9 + b) * 9 + cc] < 0) continue;
            (*thr)[(ext(a) * 9 + ext(b)) * 9 + ext(cc)] =
                m3full(IndexTables::packed(std::min(a, b), std::max(a, b)), cc) / c;
          }
      out.third = std::move(thr);
    }
    return out;
  }
};

// Largest attainable exponent tr(S Q^T) over SO(3): the best even sign flip.
inline double exponent_shift(const Vec3& s) {
  return std::max({s[0] + s[1] + s[2], s[0] - s[1] - s[2],
                   -s[0] + s[1] - s[2], -s[0] - s[1] + s[2]});
}

constexpr double kExpSkip = -64.0;  // contributions below e^-64 are dropped

// ---- dispersed chart: Euler angles about internal axis 3 ----------------

// s is the permuted diagonal with |s[2]| maximal among achievable cyclic
// shifts; perm maps internal to external axes.
inline MomentData eval_euler(const Vec3& s, int na, int nb, int order,
                             const std::array<int, 3>& perm) {
  const double shift = exponent_shift(s);
  Accumulator acc(order);
  const auto& glb = gl_rule(nb);
  std::vector<double> ca(na), sa(na);
  for (int i = 0; i < na; ++i) {
    const double a = 2.0 * M_PI * i / na;
    ca[i] = std::cos(a);
    sa[i] = std::sin(a);
  }
  const double wa = 1.0 / (static_cast<double>(na) * na);
  double q[9];
  for (int ib = 0; ib < nb; ++ib) {
    const double cb = glb[ib].first;
    const double sb = std::sqrt(std::max(0.0, 1.0 - cb * cb));
    const double wb = glb[ib].second * 0.5 * wa;
    const double s3cb = s[2] * cb - shift;
    for (int i = 0; i < na; ++i) {
      const double cai = ca[i], sai = sa[i];
      for (int j = 0; j < na; ++j) {
        const double cg = ca[j], sg = sa[j];
        q[0] = cai * cb * cg - sai * sg;
        q[4] = -sai * cb * sg + cai * cg;
        const double e = s[0] * q[0] + s[1] * q[4] + s3cb;
        if (e < kExpSkip) continue;
        q[1] = -cai * cb * sg - sai * cg;
        q[2] = cai * sb;
        q[3] = sai * cb * cg + cai * sg;
        q[5] = sai * sb;
        q[6] = -sb * cg;
        q[7] = sb * sg;
        q[8] = cb;
        acc.add(q, wb * std::exp(e));
      }
    }
  }
  return acc.finalize(shift, perm);
}

// ---- concentrated chart: exponential coordinates on a truncated box -----

inline MomentData eval_expbox(const Vec3& s, int n, int order) {
  const Vec3 p(s[1] + s[2], s[0] + s[2], s[0] + s[1]);
  Vec3 box;
  for (int i = 0; i < 3; ++i)
    box[i] = std::min(M_PI * 0.999, 6.5 / std::sqrt(std::max(1e-12, p[i])));
  const double shift = s.sum();
  Accumulator acc(order);
  const auto& gl = gl_rule(n);
  const double wscale = box[0] * box[1] * box[2];
  double q[9];
  for (int i = 0; i < n; ++i) {
    const double v0 = box[0] * gl[i].first;
    for (int j = 0; j < n; ++j) {
      const double v1 = box[1] * gl[j].first;
      const double wij = gl[i].second * gl[j].second;
      for (int k = 0; k < n; ++k) {
        const double v2 = box[2] * gl[k].first;
        const double r2 = v0 * v0 + v1 * v1 + v2 * v2;
        double sc, cc2;  // sin(r)/r and (1-cos(r))/r^2
        if (r2 < 0.36) {
          // Taylor series, below 1e-13 error for r < 0.6
          sc = 1.0 + r2 * (-1.0 / 6.0 +
                           r2 * (1.0 / 120.0 +
                                 r2 * (-1.0 / 5040.0 + r2 / 362880.0)));
          cc2 = 0.5 + r2 * (-1.0 / 24.0 +
                            r2 * (1.0 / 720.0 +
                                  r2 * (-1.0 / 40320.0 + r2 / 3628800.0)));
        } else {
          const double r = std::sqrt(r2);
          sc = std::sin(r) / r;
          cc2 = (1.0 - std::cos(r)) / r2;
        }
        // Q = I + sc*hat(v) + cc2*hat(v)^2
        q[0] = 1.0 + cc2 * (v0 * v0 - r2);
        q[4] = 1.0 + cc2 * (v1 * v1 - r2);
        q[8] = 1.0 + cc2 * (v2 * v2 - r2);
        const double e = s[0] * q[0] + s[1] * q[4] + s[2] * q[8] - shift;
        if (e < kExpSkip) continue;
        q[1] = -sc * v2 + cc2 * v0 * v1;
        q[3] = sc * v2 + cc2 * v0 * v1;
        q[2] = sc * v1 + cc2 * v0 * v2;
        q[6] = -sc * v1 + cc2 * v0 * v2;
        q[5] = -sc * v0 + cc2 * v1 * v2;
        q[7] = sc * v0 + cc2 * v1 * v2;
        const double haar = cc2 / (4.0 * M_PI * M_PI);  // (1-cos r)/(4 pi^2 r^2)
        acc.add(q, wij * gl[k].second * wscale * haar * std::exp(e));
      }
    }
  }
  return acc.finalize(shift, {0, 1, 2});
}

// ---- adaptive driver with per-regime level hints -------------------------

struct LevelHintKey {
  int chart, order, qa, qb, tolb;
  bool operator<(const LevelHintKey& o) const {
    return std::tie(chart, order, qa, qb, tolb) <
           std::tie(o.chart, o.order, o.qa, o.qb, o.tolb);
  }
};

inline std::map<LevelHintKey, int>& level_hints(std::mutex*& mu_out) {
  static std::mutex mu;
  static std::map<LevelHintKey, int> hints;
  mu_out = &mu;
  return hints;
}

inline double moment_diff(const MomentData& a, const MomentData& b) {
  double d = std::abs(a.log_c - b.log_c);
  d = std::max(d, (a.first - b.first).cwiseAbs().maxCoeff());
  if (a.second && b.second)
    for (int i = 0; i < 81; ++i)
      d = std::max(d, std::abs((*a.second)[i] - (*b.second)[i]));
  if (a.third && b.third)
    for (int i = 0; i < 729; ++i)
      d = std::max(d, std::abs((*a.third)[i] - (*b.third)[i]));
  return d;
}

inline int quantize_log(double v) {
  return static_cast<int>(std::lround(std::log(v + 4.0) / std::log(1.3)));
}

inline MomentData compute_moments(const Vec3& s_ext, int order,
                                  const QuadratureOptions& opts) {
  const Vec3 pairs(s_ext[1] + s_ext[2], s_ext[0] + s_ext[2], s_ext[0] + s_ext[1]);
  const bool concentrated = pairs.minCoeff() >= 25.0;
  const int tolb = static_cast<int>(std::lround(-std::log10(opts.rel_tol)));

  LevelHintKey key{};
  key.chart = concentrated ? 1 : 0;
  key.order = order;
  key.tolb = tolb;

  // internal permutation for the Euler chart: put the largest |s| on axis 3
  std::array<int, 3> perm{0, 1, 2};
  Vec3 s = s_ext;
  int base_a = 0, base_b = 0;
  if (!concentrated) {
    int kmax = 0;
    s_ext.cwiseAbs().maxCoeff(&kmax);
    const int t = (2 - kmax + 3) % 3;
    for (int i = 0; i < 3; ++i) perm[(i + t) % 3] = i;
    for (int i = 0; i < 3; ++i) s[(i + t) % 3] = s_ext[i];
    const double band = std::abs(s[0]) + std::abs(s[1]);
    const double scale = band + std::abs(s[2]);
    base_a = level_at_least(6.5 * std::sqrt(band) + 8.0, 8);
    base_b = level_at_least(0.62 * scale + 6.0 * std::sqrt(scale) + 16.0, 16);
    key.qa = quantize_log(band);
    key.qb = quantize_log(scale);
  } else {
    base_b = level_at_least(16.0, 16);
    key.qa = 0;
    key.qb = quantize_log(pairs.minCoeff());
  }

  auto eval = [&](int lvl) {
    if (concentrated)
      return eval_expbox(s_ext, grid_order(base_b + lvl, 16, false), order);
    return eval_euler(s, grid_order(base_a + lvl, 8, true),
                      grid_order(base_b + lvl, 16, false), order, perm);
  };

  int start = 0;
  bool trusted_hint = false;
  if (opts.use_level_hints) {
    std::mutex* mu = nullptr;
    auto& hints = level_hints(mu);
    std::lock_guard<std::mutex> lock(*mu);
    auto it = hints.find(key);
    if (it != hints.end()) {
      start = it->second;
      trusted_hint = opts.rel_tol >= 1e-7;
    }
  }

  MomentData cur = eval(start);
  if (trusted_hint) return cur;

  for (int lvl = start + 1; lvl <= start + opts.max_extra_levels; ++lvl) {
    MomentData next = eval(lvl);
    if (moment_diff(cur, next) <= opts.rel_tol) {
      if (opts.use_level_hints) {
        std::mutex* mu = nullptr;
        auto& hints = level_hints(mu);
        std::lock_guard<std::mutex> lock(*mu);
        auto it = hints.find(key);
        // the coarser level already met the tolerance against its refinement
        if (it == hints.end() || it->second > lvl - 1) hints[key] = lvl - 1;
      }
      return next;
    }
    cur = std::move(next);
  }
  throw std::runtime_error("matrix Fisher quadrature failed to converge");
}

// ---- synchronized LRU cache over (S, order, tolerance) -------------------

class MomentCache {
 public:
  explicit MomentCache(size_t capacity = 512) : capacity_(capacity) {}

  MomentData get(const Vec3& s, int order, const QuadratureOptions& opts) {
    Key key{};
    for (int i = 0; i < 3; ++i) key.s[i] = std::llround(s[i] * 1e12);
    key.order = order;
    key.tolb = static_cast<int>(std::lround(-std::log10(opts.rel_tol)));
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = map_.find(key);
      if (it != map_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second.second);
        return it->second.first;
      }
    }
    MomentData data = compute_moments(s, order, opts);
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = map_.find(key);
      if (it == map_.end()) {
        lru_.push_front(key);
        map_.emplace(key, std::make_pair(data, lru_.begin()));
        if (map_.size() > capacity_) {
          map_.erase(lru_.back());
          lru_.pop_back();
        }
      }
    }
    return data;
  }

  void set_capacity(size_t c) {
    std::lock_guard<std::mutex> lock(mu_);
    capacity_ = c;
  }

 private:
  struct Key {
    int64_t s[3];
    int order, tolb;
    bool operator<(const Key& o) const {
      return std::tie(s[0], s[1], s[2], order, tolb) <
             std::tie(o.s[0], o.s[1], o.s[2], o.order, o.tolb);
    }
  };
  std::mutex mu_;
  size_t capacity_;
  std::list<Key> lru_;
  std::map<Key, std::pair<MomentData, std::list<Key>::iterator>> map_;
};

inline MomentCache& cache() {
  static MomentCache c;
  return c;
}

}  // namespace detail

// ---- public interface ----------------------------------------------------

inline QMomentTable q_moments(const Vec3& s, int order,
                              const QuadratureOptions& opts = {}) {
  if (!s.allFinite()) throw std::invalid_argument("q_moments: non-finite S");
  return QMomentTable(detail::cache().get(s, order, opts));
}

struct NormalizerBundle {
  double log_c = 0.0;
  Vec3 d = Vec3::Zero();    // (dc/ds_i) / c = E[Q_ii]
  Mat3 d2r = Mat3::Zero();  // (d2c/ds_i ds_j) / c = E[Q_ii Q_jj]

  double c() const { return std::exp(log_c); }
  Vec3 dc() const { return d * c(); }
  Mat3 d2c() const { return d2r * c(); }
};

inline NormalizerBundle normalizer(const Vec3& s,
                                   const QuadratureOptions& opts = {}) {
  const QMomentTable t = q_moments(s, 2, opts);
  NormalizerBundle nb;
  nb.log_c = t.log_c();
  for (int i = 0; i < 3; ++i) {
    nb.d[i] = t.first(i, i);
    for (int j = 0; j < 3; ++j) nb.d2r(i, j) = t.second(i, i, j, j);
  }
  return nb;
}

struct MatrixFisher {
  so3::ProperSvd svd;

  MatrixFisher() {
    svd.u = Mat3::Identity();
    svd.v = Mat3::Identity();
    svd.s = Vec3::Zero();
  }
  explicit MatrixFisher(const so3::ProperSvd& p) : svd(p) {}
  explicit MatrixFisher(const Mat3& f,
                        so3::SvdConvention conv = so3::SvdConvention::def1)
      : svd(so3::proper_svd(f, conv)) {}

  Mat3 F() const { return svd.reconstruct(); }
  Mat3 mode() const { return svd.u * svd.v.transpose(); }
};

inline Mat3 mean_matrix(const MatrixFisher& mf,
                        const QuadratureOptions& opts = {}) {
  const QMomentTable t = q_moments(mf.svd.s, 1, opts);
  Vec3 d;
  for (int i = 0; i < 3; ++i) d[i] = t.first(i, i);
  return mf.svd.u * d.asDiagonal() * mf.svd.v.transpose();
}

inline double log_density(const MatrixFisher& mf, const Mat3& r,
                          const QuadratureOptions& opts = {}) {
  const QMomentTable t = q_moments(mf.svd.s, 1, opts);
  return (mf.F().transpose() * r).trace() - t.log_c();
}

inline double density(const MatrixFisher& mf, const Mat3& r,
                      const QuadratureOptions& opts = {}) {
  return std::exp(log_density(mf, r, opts));
}

// Solve d_i = E[Q_ii](S) for S given the mean singular values D.
inline Vec3 solve_s_from_d(const Vec3& dd, const QuadratureOptions& opts = {},
                           const Vec3* warm_start = nullptr) {
  const double cap = 1e4;
  if (!(dd[0] >= dd[1] - 1e-12 && dd[1] >= std::abs(dd[2]) - 1e-12))
    throw std::invalid_argument("solve_s_from_d: moments must satisfy d1 >= d2 >= |d3|");
  if (!(dd.cwiseAbs().maxCoeff() < 1.0) ||
      dd[0] + dd[1] + std::abs(dd[2]) >= 3.0 - 1e-12)
    throw std::invalid_argument("solve_s_from_d: moments out of the valid range");

  Vec3 s;
  bool asymptotic = false;
  {
    const double t = (dd[0] + dd[1] + std::abs(dd[2])) / 3.0;
    bool init_done = false;
    if (t > 0.7) {
      // concentrated: 1 - d_i ~ (1/p_j + 1/p_k)/2 with p_i = s_j + s_k
      const Vec3 a = Vec3::Ones() - dd;
      Vec3 b(a[1] + a[2] - a[0], a[0] + a[2] - a[1], a[0] + a[1] - a[2]);
      if (b.minCoeff() > 1e-9) {
        const Vec3 p = b.cwiseInverse();
        s = Vec3(p[1] + p[2] - p[0], p[0] + p[2] - p[1], p[0] + p[1] - p[2]) / 2.0;
        init_done = true;
        // Beyond this concentration the Newton Jacobian (~1/p^2) falls below
        // the attainable quadrature accuracy; the inversion above is already
        // correct to a relative O(1/p) which is far tighter.
        asymptotic = p.minCoeff() > 2000.0;
      }
    }
    if (!init_done) s = 3.0 * dd / std::max(1e-3, 1.0 - t);
    if (warm_start && !asymptotic) s = *warm_start;
  }
  s = s.cwiseMax(-cap).cwiseMin(cap);
  if (asymptotic) return s;

  // loose-tolerance callers accept a residual at the quadrature noise level
  const double tol =
      std::max(1e-11, (opts.rel_tol >= 1e-7 ? 2.0 : 0.1) * opts.rel_tol);
  QuadratureOptions qopts = opts;
  // strict callers get extra quadrature accuracy below the Newton tolerance;
  // loose callers keep their own tolerance so cached grid levels stay usable
  if (opts.rel_tol < 1e-7) qopts.rel_tol = std::min(opts.rel_tol, 1e-9);
  double res = std::numeric_limits<double>::infinity();
  Vec3 d_cur = Vec3::Zero();
  for (int iter = 0; iter < 80; ++iter) {
    const NormalizerBundle nb = normalizer(s, qopts);
    d_cur = nb.d;
    res = (d_cur - dd).cwiseAbs().maxCoeff();
    if (res < tol) return s;
    Mat3 jac = nb.d2r - d_cur * d_cur.transpose();  // d d_i / d s_j
    jac.diagonal().array() += 1e-14;
    Vec3 step = jac.fullPivLu().solve(dd - d_cur);
    if (!step.allFinite()) throw std::runtime_error("solve_s_from_d: singular Jacobian");
    if (res < 1e-4) {
      // quadratic convergence zone: take the full step without a line search
      s = (s + step).cwiseMax(-cap).cwiseMin(cap);
      continue;
    }
    double alpha = 1.0;
    for (int bt = 0; bt < 12; ++bt) {
      const Vec3 trial = (s + alpha * step).cwiseMax(-cap).cwiseMin(cap);
      const double r2 = (normalizer(trial, qopts).d - dd).cwiseAbs().maxCoeff();
      if (r2 < res || bt == 11) {
        s = trial;
        break;
      }
      alpha *= 0.5;
    }
  }
  if (res < 1e-7) return s;  // capped or extremely concentrated inputs
  throw std::runtime_error("solve_s_from_d: no convergence");
}

// ---- samplers -------------------------------------------------------------

// Rejection with the mode-normalized envelope: accept a Haar-uniform proposal
// with probability etr(S(Q^T - I_mode)). Exact at any S, efficient only when
// the distribution is dispersed.
template <class Rng>
Mat3 sample_canonical_rejection(const Vec3& s, Rng& rng) {
  const double shift = detail::exponent_shift(s);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const Mat3 q = so3::uniform_rotation(rng);
    const double e = s[0] * q(0, 0) + s[1] * q(1, 1) + s[2] * q(2, 2) - shift;
    if (std::log(u(rng)) < e) return q;
  }
}

// Exact sampler via the quaternion Bingham representation with an angular
// central Gaussian envelope; acceptance is bounded away from zero uniformly
// in the concentration.
template <class Rng>
Mat3 sample_canonical_bingham(const Vec3& s, Rng& rng) {
  const Eigen::Vector4d lam(s[0] + s[1] + s[2], s[0] - s[1] - s[2],
                            -s[0] + s[1] - s[2], -s[0] - s[1] + s[2]);
  const double lmax = lam.maxCoeff();
  const Eigen::Vector4d uu = (lmax - lam.array()).matrix();  // >= 0, one zero
  // solve sum_i 1/(b + 2 u_i) = 1 for b in (0, 4]
  double lo = 1e-14, hi = 4.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double f = 0.0;
    for (int i = 0; i < 4; ++i) f += 1.0 / (mid + 2.0 * uu[i]);
    (f > 1.0 ? lo : hi) = mid;
  }
  const double b = 0.5 * (lo + hi);
  Eigen::Vector4d sigma;
  for (int i = 0; i < 4; ++i) sigma[i] = 1.0 / std::sqrt(1.0 + 2.0 * uu[i] / b);
  const double log_m = -(4.0 - b) / 2.0 + 2.0 * std::log(4.0 / b);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (;;) {
    Eigen::Vector4d z;
    for (int i = 0; i < 4; ++i) z[i] = sigma[i] * n(rng);
    const double zn = z.norm();
    if (zn < 1e-12) continue;
    const Eigen::Vector4d q = z / zn;
    const double uval = uu.dot(q.cwiseProduct(q));
    const double log_accept = -uval + 2.0 * std::log1p(2.0 * uval / b) - log_m;
    if (std::log(unif(rng)) < log_accept)
      return so3::quat_to_matrix(q[0], q[1], q[2], q[3]);
  }
}

template <class Rng>
Mat3 sample_canonical(const Vec3& s, Rng& rng) {
  if (detail::exponent_shift(s) <= 15.0) return sample_canonical_rejection(s, rng);
  return sample_canonical_bingham(s, rng);
}

template <class Rng>
Mat3 sample(const MatrixFisher& mf, Rng& rng) {
  return mf.svd.u * sample_canonical(mf.svd.s, rng) * mf.svd.v.transpose();
}

}  // namespace fisher
}  // namespace mfg
