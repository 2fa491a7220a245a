#include "polycert/sos.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <stdexcept>
#include <utility>

#include "identity_rows.hpp"

namespace polycert {

using detail::add_identity_rows;
using detail::add_margin_cap;
using detail::exp_add;
using detail::extract_gram;
using detail::IdentityBlock;
using detail::shift_vars;
using detail::solved;

namespace {

// Post-solve acceptance floor for the recomputed smallest eigenvalue of Q.
constexpr double kMinEigTol = -1e-8;

// Denominator ladder for turning solver floats into rational witnesses: try
// the coarsest grid first so structured solutions come out exact, fall back
// to an essentially-lossless approximation.
constexpr std::array<std::int64_t, 8> kDenLadder = {1,    2,     4,     10,
                                                    100,  1000,  10000, 1000000000000LL};

// Diagnostic trace on stderr, enabled by POLYCERT_TRACE=1 in the environment.
bool trace_enabled() {
  static const bool on = [] {
    const char* v = std::getenv("POLYCERT_TRACE");
    return v != nullptr && v[0] != '\0' && v[0] != '0';
  }();
  return on;
}

std::optional<GramCertificate> gate(GramCertificate cert, const SosSettings& s) {
  if (cert.margin < s.accept_margin) return std::nullopt;
  if (cert.residual > s.residual_tol) return std::nullopt;
  if (cert.min_eigenvalue < kMinEigTol) return std::nullopt;
  return cert;
}

// <z, grad^2 g(x) z> in the doubled space (x variables first, then z).
PolyQ hessian_form(const PolyQ& g) {
  const int nv = g.nvars();
  PolyQ target(2 * nv);
  const auto H = g.hessian();
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j) {
      if (H[i][j].is_zero()) continue;
      Exponent zz(2 * nv, 0);
      zz[nv + i] += 1;
      zz[nv + j] += 1;
      target += shift_vars(H[i][j], 2 * nv, 0) * PolyQ::monomial(std::move(zz), Rational(1));
    }
  return target;
}

}  // namespace

PolyD gram_polynomial(int nv, const std::vector<Exponent>& basis, const Eigen::MatrixXd& Q) {
  PolyD r(nv);
  const int B = static_cast<int>(basis.size());
  for (int a = 0; a < B; ++a)
    for (int b = a; b < B; ++b) {
      const double v = Q(a, b) * (a == b ? 1.0 : 2.0);
      if (v == 0.0) continue;
      r.add_term(exp_add(basis[a], basis[b]), v);
    }
  return r;
}

GramCertificate make_gram_certificate(PolyQ target, std::vector<Exponent> basis, Eigen::MatrixXd Q,
                                      double margin) {
  GramCertificate cert;
  cert.nv = target.nvars();
  cert.basis = std::move(basis);
  cert.Q = std::move(Q);
  cert.target = std::move(target);
  cert.margin = margin;
  PolyD diff = gram_polynomial(cert.nv, cert.basis, cert.Q) - to_float(cert.target);
  double r = 0.0;
  for (const auto& [e, c] : diff.terms()) r = std::max(r, std::abs(c));
  cert.residual = r;
  if (cert.Q.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cert.Q, Eigen::EigenvaluesOnly);
    cert.min_eigenvalue = es.eigenvalues().minCoeff();
  }
  return cert;
}

std::vector<int> minor_weights(const MinorsMap& p) {
  std::vector<int> w;
  w.reserve(p.indices.size());
  for (const auto& idx : p.indices) w.push_back(idx.order());
  return w;
}

std::optional<GramCertificate> sos_decompose(const PolyQ& f, int two_d,
                                             const SosSettings& settings) {
  if (two_d < 0 || two_d % 2 != 0)
    throw std::invalid_argument("sos_decompose: degree bound must be even and nonnegative");
  if (f.degree() > two_d)
    throw std::invalid_argument("sos_decompose: polynomial degree exceeds the bound");

  ConeProgram prog;
  prog.sense = Sense::Max;
  const int t_var = prog.add_var(1.0);
  add_margin_cap(prog, t_var);

  IdentityBlock blk;
  blk.nv = f.nvars();
  blk.basis = monomial_basis(f.nvars(), two_d / 2);
  blk.with_margin = true;
  blk.rhs = f;
  if (!add_identity_rows(prog, blk, t_var)) return std::nullopt;

  const Solution sol = solve(prog, settings.solver);
  if (!solved(sol)) return std::nullopt;
  const double t = sol.x[t_var];
  if (t < settings.accept_margin) return std::nullopt;
  return gate(make_gram_certificate(f, blk.basis, extract_gram(sol.x, blk.grid, t), t), settings);
}

std::optional<GramCertificate> check_sos_convex(const PolyQ& g, ConvexityForm form,
                                                const SosSettings& settings) {
  const int nv = g.nvars();
  if (g.degree() <= 1)  // affine: the Hessian form is identically zero
    return make_gram_certificate(PolyQ(2 * nv), {}, Eigen::MatrixXd(0, 0), 0.0);
  if (g.degree() % 2 != 0)
    throw std::invalid_argument("check_sos_convex: degree must be even (or the input affine)");
  const int half = g.degree() / 2;

  ConeProgram prog;
  prog.sense = Sense::Max;
  const int t_var = prog.add_var(1.0);
  add_margin_cap(prog, t_var);

  IdentityBlock blk;
  blk.nv = 2 * nv;
  blk.with_margin = true;
  if (form == ConvexityForm::Hessian) {
    blk.rhs = hessian_form(g);
    // Gram basis {z_i x^a : |a| <= deg(g)/2 - 1}. Squares linear in z are
    // complete here: grouping any decomposition by z-degree, the z-free parts
    // of the squares sum to zero (the target has no z-free monomial) and so
    // do the z-degree >= 2 tops (no z-degree >= 3 monomial); the x-degree cap
    // is the usual highest-degree cancellation argument.
    for (int i = 0; i < nv; ++i)
      for (const Exponent& a : monomial_basis(nv, half - 1)) {
        Exponent e(2 * nv, 0);
        for (int k = 0; k < nv; ++k) e[k] = a[k];
        e[nv + i] += 1;
        blk.basis.push_back(std::move(e));
      }
    std::sort(blk.basis.begin(), blk.basis.end(), GradedLexLess{});
  } else {
    blk.rhs = bregman(g);
    blk.basis = monomial_basis(2 * nv, half);
  }
  if (!add_identity_rows(prog, blk, t_var)) return std::nullopt;

  const Solution sol = solve(prog, settings.solver);
  if (!solved(sol)) return std::nullopt;
  const double t = sol.x[t_var];
  if (t < settings.accept_margin) return std::nullopt;
  return gate(make_gram_certificate(blk.rhs, blk.basis, extract_gram(sol.x, blk.grid, t), t),
              settings);
}

std::optional<PolyconvexityCertificate> certify_sos_polyconvex(const PolyQ& f, const MinorsMap& p,
                                                               int deg_q,
                                                               const SosSettings& settings) {
  const int mn = p.space.total();
  if (f.nvars() != mn)
    throw std::invalid_argument("certify_sos_polyconvex: f lives on the wrong matrix space");
  if (deg_q < 0) throw std::invalid_argument("certify_sos_polyconvex: deg_q must be >= 0");
  const int T = std::max(f.degree(), deg_q + 1);
  const int T_even = T + (T % 2);
  const int dv = 2 * mn;  // X variables first, then Y

  const std::vector<PolyQ> minors = minors_symbolic(p);
  std::vector<PolyQ> diff;  // p_i(X) - p_i(Y)
  diff.reserve(minors.size());
  for (const PolyQ& pi : minors)
    diff.push_back(shift_vars(pi, dv, 0) - shift_vars(pi, dv, mn));

  // One scalar unknown per (minor component, Y-monomial). Component i is
  // capped at min(deg_q, T - s_i) so q_i * (p_i(X) - p_i(Y)) stays within T.
  struct QVar {
    int comp;
    Exponent mono;  // in the mn Y-variables
    int var = -1;
  };
  std::vector<QVar> qvars;
  for (int i = 0; i < p.N(); ++i) {
    const int cap = std::min(deg_q, T - p.indices[i].order());
    if (cap < 0) continue;
    for (const Exponent& a : monomial_basis(mn, cap)) qvars.push_back({i, a, -1});
  }

  const PolyQ rhs = shift_vars(f, dv, 0) - shift_vars(f, dv, mn);
  const std::vector<Exponent> basis = monomial_basis(dv, T_even / 2);

  auto make_block = [&](const std::vector<QVar>& qv) {
    IdentityBlock blk;
    blk.nv = dv;
    blk.basis = basis;
    blk.rhs = rhs;
    for (const QVar& q : qv) {
      Exponent ey(dv, 0);
      for (int k = 0; k < mn; ++k) ey[mn + k] = q.mono[k];
      blk.linear.push_back({q.var, PolyQ::monomial(std::move(ey), Rational(1)) * diff[q.comp]});
    }
    return blk;
  };

  // Phase 1: maximize the margin to decide certifiability.
  ConeProgram prog;
  prog.sense = Sense::Max;
  for (QVar& q : qvars) q.var = prog.add_var();
  const int t_var = prog.add_var(1.0);
  add_margin_cap(prog, t_var);
  IdentityBlock blk = make_block(qvars);
  blk.with_margin = true;
  if (!add_identity_rows(prog, blk, t_var)) return std::nullopt;

  const Solution sol = solve(prog, settings.solver);
  if (trace_enabled())
    std::fprintf(stderr, "[sos-pc] phase1 status=%d margin=%.3e msg=%s\n",
                 static_cast<int>(sol.status), solved(sol) ? sol.x[t_var] : 0.0,
                 sol.message.c_str());
  if (!solved(sol)) return std::nullopt;
  const double margin = sol.x[t_var];
  if (margin < settings.accept_margin) return std::nullopt;

  struct Candidate {
    bool reduced = false;       // values index hvars below instead of qvars
    std::vector<double> vals;
    Eigen::MatrixXd Q;
  };
  std::vector<Candidate> candidates;

  // Phase 2 works on a reduced parameterization. Any valid certificate has
  // F >= 0 with F = 0 on the diagonal X = Y, so grad_X F vanishes there:
  // the order-1 multipliers are forced to grad f - sum_a q_a grad p_a over
  // the higher-order components, and substituting them turns F into
  //     F = D_f(X,Y) - sum_{order >= 2} q_a(Y) * D_{p_a}(X,Y)
  // with D the Bregman divergence. Only the higher-order coefficients remain
  // free, which conditions the canonicalization solve far better.
  struct HVar {
    int comp;
    Exponent mono;  // in the mn Y-variables
    int var = -1;
  };
  std::vector<HVar> hvars;
  for (int a = 0; a < p.N(); ++a) {
    if (p.indices[a].order() <= 1) continue;
    const int cap = std::min(deg_q, T - p.indices[a].order());
    if (cap < 0) continue;
    for (const Exponent& e : monomial_basis(mn, cap)) hvars.push_back({a, e, -1});
  }
  const int cap1 = std::min(deg_q, T - 1);
  const std::vector<PolyQ> grad_f = f.gradient();
  std::vector<std::vector<PolyQ>> minor_grad(p.N());
  for (int a = 0; a < p.N(); ++a)
    if (p.indices[a].order() > 1) minor_grad[a] = minors[a].gradient();

  // Phase 2: the target vanishes identically at X = Y, so the optimal margin
  // is never strictly positive; minimizing sum |q coeffs| - w*t picks the
  // sparse representative of the optimal face (the margin term keeps the
  // program strictly feasible, and its weight w dominates any feasible
  // sparsity-for-margin exchange rate so the optimum still pins t at 0),
  // which is what makes small-denominator rounding of q reliable.
  if (settings.l1_canonicalize && !hvars.empty()) {
    ConeProgram l1;
    l1.sense = Sense::Min;
    for (HVar& h : hvars) h.var = l1.add_var();
    const int t2_var = l1.add_var(-1e3);
    add_margin_cap(l1, t2_var);

    auto abs_pair = [&l1](double base, const std::vector<std::pair<int, double>>& lin) {
      const int s_var = l1.add_var(1.0);
      for (double sign : {1.0, -1.0}) {
        LmiBlock abs_blk;
        abs_blk.dim = 1;
        if (base != 0.0) abs_blk.f0.push_back({{0, 0}, sign * base});
        abs_blk.entries.push_back({s_var, 0, 0, 1.0});
        for (const auto& [v, c] : lin) abs_blk.entries.push_back({v, 0, 0, sign * c});
        l1.psd_blocks.push_back(std::move(abs_blk));
      }
    };

    for (const HVar& h : hvars) abs_pair(0.0, {{h.var, 1.0}});

    // Entry-block coefficients are affine in the reduced variables: penalize
    // those within the degree cap, pin the rest to zero.
    bool representable = true;
    for (int i = 0; i < mn && representable; ++i) {
      std::map<Exponent, std::pair<double, std::vector<std::pair<int, double>>>, GradedLexLess>
          affine;
      for (const auto& [e, c] : grad_f[i].terms()) affine[e].first += to_double(c);
      for (const HVar& h : hvars) {
        const PolyQ contrib =
            PolyQ::monomial(h.mono, Rational(1)) * minor_grad[h.comp][i];
        for (const auto& [e, c] : contrib.terms())
          affine[e].second.push_back({h.var, -to_double(c)});
      }
      for (const auto& [e, expr] : affine) {
        int deg = 0;
        for (int k = 0; k < mn; ++k) deg += e[k];
        if (deg <= cap1) {
          abs_pair(expr.first, expr.second);
        } else if (expr.second.empty()) {
          if (expr.first != 0.0) representable = false;
        } else {
          EqRow row;
          row.coeffs = expr.second;
          row.rhs = -expr.first;
          l1.equalities.push_back(std::move(row));
        }
      }
    }

    IdentityBlock blk2;
    blk2.nv = dv;
    blk2.basis = basis;
    blk2.with_margin = true;
    blk2.rhs = bregman(f);
    for (const HVar& h : hvars)
      blk2.linear.push_back(
          {h.var, shift_vars(PolyQ::monomial(h.mono, Rational(1)), dv, mn) * bregman(minors[h.comp])});

    if (representable && add_identity_rows(l1, blk2, t2_var)) {
      const Solution sol2 = solve(l1, settings.solver);
      if (trace_enabled())
        std::fprintf(stderr, "[sos-pc] l1 status=%d obj=%.6e t=%.3e msg=%s\n",
                     static_cast<int>(sol2.status), sol2.objective,
                     sol2.x.size() > 0 ? sol2.x[t2_var] : 0.0, sol2.message.c_str());
      if (solved(sol2)) {
        Candidate c;
        c.reduced = true;
        for (const HVar& h : hvars) c.vals.push_back(sol2.x[h.var]);
        c.Q = extract_gram(sol2.x, blk2.grid, sol2.x[t2_var]);
        candidates.push_back(std::move(c));
      }
    }
  }
  {
    Candidate c;
    for (const QVar& q : qvars) c.vals.push_back(sol.x[q.var]);
    c.Q = extract_gram(sol.x, blk.grid, margin);
    candidates.push_back(std::move(c));
  }

  std::optional<PolyQ> last_refit;  // avoid re-solving an identical target
  for (const Candidate& cand : candidates) {
    for (const std::int64_t den : kDenLadder) {
      std::vector<PolyQ> q_rat(p.N(), PolyQ(mn));
      double snap = 0.0;  // how far rounding moved the multiplier
      if (cand.reduced) {
        // Round only the higher-order coefficients; the order-1 multipliers
        // follow exactly in rational arithmetic from the stationarity
        // identity, so they need no rounding of their own.
        for (std::size_t k = 0; k < hvars.size(); ++k) {
          const Rational r = nearest_rational(cand.vals[k], den);
          snap = std::max(snap, std::abs(cand.vals[k] - to_double(r)));
          q_rat[hvars[k].comp].add_term(hvars[k].mono, r);
        }
        bool within_cap = true;
        for (int i = 0; i < mn && within_cap; ++i) {
          PolyQ e = grad_f[i];
          for (int a = 0; a < p.N(); ++a)
            if (p.indices[a].order() > 1 && !q_rat[a].is_zero())
              e -= q_rat[a] * minor_grad[a][i];
          if (e.degree() > cap1) within_cap = false;
          q_rat[i] = std::move(e);
        }
        if (!within_cap) continue;
      } else {
        for (std::size_t k = 0; k < qvars.size(); ++k) {
          const Rational r = nearest_rational(cand.vals[k], den);
          snap = std::max(snap, std::abs(cand.vals[k] - to_double(r)));
          q_rat[qvars[k].comp].add_term(qvars[k].mono, r);
        }
      }
      PolyQ target = rhs;
      for (int i = 0; i < p.N(); ++i)
        if (!q_rat[i].is_zero()) target -= shift_vars(q_rat[i], dv, mn) * diff[i];
      GramCertificate cert = make_gram_certificate(std::move(target), basis, cand.Q, margin);
      if (trace_enabled())
        std::fprintf(stderr, "[sos-pc] cand=%zd den=%lld snap=%.3e residual=%.3e min_eig=%.3e\n",
                     &cand - candidates.data(), static_cast<long long>(den), snap, cert.residual,
                     cert.min_eigenvalue);
      bool ok = cert.residual <= settings.residual_tol && cert.min_eigenvalue >= kMinEigTol;
      if (!ok && snap <= 0.2 && (!last_refit || !(*last_refit == cert.target))) {
        // The solver's Gram matched its own slightly-off multiplier, not the
        // rounded one; fit a fresh Gram against the exact rounded target.
        last_refit = cert.target;
        auto refit = sos_decompose(cert.target, T_even, settings);
        if (trace_enabled())
          std::fprintf(stderr, "[sos-pc] refit den=%lld -> %s\n", static_cast<long long>(den),
                       refit ? "certified" : "inconclusive");
        if (refit) {
          cert = std::move(*refit);
          ok = true;
        }
      }
      if (!ok) continue;
      PolyconvexityCertificate out;
      out.kind = CertKind::SOSPolyconvex;
      out.q = std::move(q_rat);
      out.g = PolyQ(p.N());
      out.gram = std::move(cert);
      out.deg_q = deg_q;
      return out;
    }
  }
  return std::nullopt;
}

std::optional<PolyconvexityCertificate> certify_lifted_sos_polyconvex(
    const PolyQ& f, const MinorsMap& p, int deg_g, const SosSettings& settings) {
  const int mn = p.space.total();
  if (f.nvars() != mn)
    throw std::invalid_argument("certify_lifted_sos_polyconvex: f lives on the wrong matrix space");
  if (deg_g < 2 || deg_g % 2 != 0)
    throw std::invalid_argument("certify_lifted_sos_polyconvex: deg_g must be even and >= 2");
  const int N = p.N();
  const std::vector<int> w = minor_weights(p);
  const int W = std::max(f.degree(), deg_g);
  auto wdeg = [&](const Exponent& e) {
    int d = 0;
    for (int i = 0; i < N; ++i) d += e[i] * w[i];
    return d;
  };

  // Candidate monomials for g. Composing q_i -> p_i(X) turns the minor-
  // weighted degree into the entry degree, so by default monomials weighing
  // more than W = max(deg f, deg g) are dropped; --full-basis restores them.
  std::vector<Exponent> gbasis;
  for (const Exponent& e : monomial_basis(N, deg_g))
    if (settings.full_basis || wdeg(e) <= W) gbasis.push_back(e);

  const std::vector<PolyQ> minors = minors_symbolic(p);
  std::vector<PolyQ> comp;  // prod p_i^{e_i}, exact, in the entry variables
  comp.reserve(gbasis.size());
  for (const Exponent& e : gbasis) {
    PolyQ t = PolyQ::constant(mn, Rational(1));
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < e[i]; ++k) t = t * minors[i];
    comp.push_back(std::move(t));
  }

  // Gram basis {z_i q^a}: plain degree of a square stays within deg_g and,
  // giving z_i the weight of minor i, weighted degree stays within W. Both
  // caps are complete by the same top-part cancellation argument as in
  // check_sos_convex, applied per grading.
  const int hv = 2 * N;
  std::vector<Exponent> zq;
  for (const Exponent& a : monomial_basis(N, deg_g / 2 - 1)) {
    const int wa = wdeg(a);
    for (int i = 0; i < N; ++i) {
      if (!settings.full_basis && wa + w[i] > W / 2) continue;
      Exponent e(hv, 0);
      for (int k = 0; k < N; ++k) e[k] = a[k];
      e[N + i] += 1;
      zq.push_back(std::move(e));
    }
  }
  std::sort(zq.begin(), zq.end(), GradedLexLess{});

  ConeProgram prog;
  prog.sense = Sense::Max;
  std::vector<int> cvars;
  cvars.reserve(gbasis.size());
  for (std::size_t e = 0; e < gbasis.size(); ++e) cvars.push_back(prog.add_var());
  const int t_var = prog.add_var(1.0);
  add_margin_cap(prog, t_var);

  IdentityBlock comp_blk;  // g(p(X)) = f(X), linear in the g coefficients
  comp_blk.nv = mn;
  comp_blk.rhs = f;
  for (std::size_t e = 0; e < gbasis.size(); ++e) comp_blk.linear.push_back({cvars[e], comp[e]});
  if (!add_identity_rows(prog, comp_blk, -1)) return std::nullopt;

  IdentityBlock hess_blk;  // <b,Qb> + t diag = <z, grad^2 g(q) z>
  hess_blk.nv = hv;
  hess_blk.basis = zq;
  hess_blk.with_margin = true;
  hess_blk.rhs = PolyQ(hv);
  for (std::size_t e = 0; e < gbasis.size(); ++e) {
    PolyQ form = hessian_form(PolyQ::monomial(gbasis[e], Rational(1)));
    if (form.is_zero()) continue;
    hess_blk.linear.push_back({cvars[e], -form});
  }
  if (!add_identity_rows(prog, hess_blk, t_var)) return std::nullopt;

  const Solution sol = solve(prog, settings.solver);
  if (!solved(sol)) return std::nullopt;
  const double margin = sol.x[t_var];
  if (margin < settings.accept_margin) return std::nullopt;
  const Eigen::MatrixXd Q = extract_gram(sol.x, hess_blk.grid, margin);

  for (const std::int64_t den : kDenLadder) {
    PolyQ g_rat(N);
    for (std::size_t e = 0; e < gbasis.size(); ++e)
      g_rat.add_term(gbasis[e], nearest_rational(sol.x[cvars[e]], den));

    // Exact composition defect, repaired through the order-1 components:
    // those are the matrix entries themselves, so re-expressing the defect
    // in them and subtracting restores g(p(X)) = f(X) exactly.
    PolyQ defect(mn);
    for (std::size_t e = 0; e < gbasis.size(); ++e) {
      const Rational c = g_rat.coeff(gbasis[e]);
      if (c != Rational(0)) defect += comp[e] * c;
    }
    defect -= f;
    if (!defect.is_zero()) {
      if (defect.degree() > deg_g) continue;
      PolyQ lifted(N);
      for (const auto& [a, c] : defect.terms()) {
        Exponent e(N, 0);
        for (int k = 0; k < mn; ++k) e[k] = a[k];
        lifted.add_term(std::move(e), c);
      }
      g_rat -= lifted;
    }

    GramCertificate cert = make_gram_certificate(hessian_form(g_rat), zq, Q, margin);
    if (cert.residual > settings.residual_tol || cert.min_eigenvalue < kMinEigTol) continue;
    PolyconvexityCertificate out;
    out.kind = CertKind::LiftedSOSPolyconvex;
    out.g = std::move(g_rat);
    out.gram = std::move(cert);
    out.deg_g = deg_g;
    return out;
  }
  return std::nullopt;
}

}  // namespace polycert
