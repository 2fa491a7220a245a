#include "polycert/envelope.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <utility>

#include "identity_rows.hpp"

namespace polycert {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int exp_degree(const Exponent& e) {
  int d = 0;
  for (int v : e) d += v;
  return d;
}

int half_up(int d) { return (d + 1) / 2; }

std::vector<double> flatten(const Eigen::MatrixXd& X) {
  std::vector<double> x(static_cast<std::size_t>(X.size()));
  for (int c = 0; c < X.cols(); ++c)
    for (int r = 0; r < X.rows(); ++r) x[static_cast<std::size_t>(c) * X.rows() + r] = X(r, c);
  return x;
}

double eval_at(const PolyQ& f, const Eigen::MatrixXd& X) { return to_float(f).eval(flatten(X)); }

// ---- Measure polishing ------------------------------------------------------
//
// An atomic measure is a feasible point of the moment relaxation: its
// pseudo-moments satisfy the equality rows through the weights, and its
// moment matrices are exact Gram matrices of evaluation vectors, hence
// positive semidefinite.  Near rank-deficient optima the interior-point
// iterate carries noise that scales like the square root of its objective
// error, while the measure manifold is smooth, so a few descent steps on the
// atom positions followed by re-solving the (linear) equality constraints in
// the weights routinely lands orders of magnitude closer to the optimum than
// the iterate itself.  A polished measure is adopted only when it is
// verifiably feasible and does not worsen the value.

double measure_objective(const PolyD& fd, const std::vector<Atom>& atoms) {
  double obj = 0.0;
  for (const Atom& a : atoms) obj += a.weight * fd.eval(flatten(a.X));
  return obj;
}

// Minimal-norm correction of the weights so the measure satisfies the mass
// and barycenter equalities exactly.  Fails when the corrected weights stray
// negative or the equalities cannot be met on this support.
bool refit_weights(std::vector<Atom>& atoms, const std::vector<PolyD>& pd,
                   const std::vector<double>& pval) {
  const int r = static_cast<int>(atoms.size());
  const int rows = static_cast<int>(pval.size()) + 1;
  Eigen::MatrixXd B(rows, r);
  Eigen::VectorXd d(rows), w0(r);
  B.row(0).setOnes();
  d(0) = 1.0;
  for (int i = 0; i < r; ++i) {
    w0(i) = atoms[static_cast<std::size_t>(i)].weight;
    const std::vector<double> coords = flatten(atoms[static_cast<std::size_t>(i)].X);
    for (std::size_t a = 0; a < pval.size(); ++a) B(static_cast<int>(a) + 1, i) = pd[a].eval(coords);
  }
  for (std::size_t a = 0; a < pval.size(); ++a) d(static_cast<int>(a) + 1) = pval[a];
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(B);
  const Eigen::VectorXd w = w0 + cod.solve((d - B * w0).eval());
  const double scale = 1.0 + d.cwiseAbs().maxCoeff();
  if ((B * w - d).cwiseAbs().maxCoeff() > 1e-10 * scale) return false;
  if (w.minCoeff() < -1e-9) return false;
  for (int i = 0; i < r; ++i) atoms[static_cast<std::size_t>(i)].weight = std::max(w(i), 0.0);
  return true;
}

// Backtracking gradient descent on the atom positions for the penalized
// objective  sum_i w_i f(A_i) + rho * || sum_i w_i p(A_i) - p(X) ||^2.
void descend_positions(std::vector<Atom>& atoms, const PolyD& fd, const std::vector<PolyD>& fgrad,
                       const std::vector<PolyD>& pd, const std::vector<std::vector<PolyD>>& pgrad,
                       const std::vector<double>& pval, double rho, int iters) {
  const int r = static_cast<int>(atoms.size());
  const int nv = static_cast<int>(fgrad.size());
  const int m = static_cast<int>(atoms.front().X.rows());

  const auto penalized = [&](const Eigen::VectorXd& z) {
    double obj = 0.0;
    std::vector<double> res(pval.size());
    for (std::size_t a = 0; a < pval.size(); ++a) res[a] = -pval[a];
    for (int i = 0; i < r; ++i) {
      const std::vector<double> coords(z.data() + i * nv, z.data() + (i + 1) * nv);
      const double w = atoms[static_cast<std::size_t>(i)].weight;
      obj += w * fd.eval(coords);
      for (std::size_t a = 0; a < pval.size(); ++a) res[a] += w * pd[a].eval(coords);
    }
    for (double ra : res) obj += rho * ra * ra;
    return obj;
  };
  const auto gradient = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
    std::vector<double> res(pval.size());
    for (std::size_t a = 0; a < pval.size(); ++a) res[a] = -pval[a];
    for (int i = 0; i < r; ++i) {
      const std::vector<double> coords(z.data() + i * nv, z.data() + (i + 1) * nv);
      const double w = atoms[static_cast<std::size_t>(i)].weight;
      for (std::size_t a = 0; a < pval.size(); ++a) res[a] += w * pd[a].eval(coords);
    }
    for (int i = 0; i < r; ++i) {
      const std::vector<double> coords(z.data() + i * nv, z.data() + (i + 1) * nv);
      const double w = atoms[static_cast<std::size_t>(i)].weight;
      for (int v = 0; v < nv; ++v) {
        double gv = w * fgrad[static_cast<std::size_t>(v)].eval(coords);
        for (std::size_t a = 0; a < pval.size(); ++a)
          gv += 2.0 * rho * res[a] * w * pgrad[a][static_cast<std::size_t>(v)].eval(coords);
        g(i * nv + v) = gv;
      }
    }
    return g;
  };

  Eigen::VectorXd z(r * nv);
  for (int i = 0; i < r; ++i) {
    const std::vector<double> coords = flatten(atoms[static_cast<std::size_t>(i)].X);
    for (int v = 0; v < nv; ++v) z(i * nv + v) = coords[static_cast<std::size_t>(v)];
  }
  double fz = penalized(z);
  double step = 1.0;
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd g = gradient(z);
    const double gn = g.cwiseAbs().maxCoeff();
    if (gn <= 1e-14 * (1.0 + std::abs(fz))) break;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt) {
      const Eigen::VectorXd zt = z - step * g;
      const double ft = penalized(zt);
      if (ft < fz - 0.25 * step * g.squaredNorm()) {
        z = zt;
        fz = ft;
        step *= 1.5;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  for (int i = 0; i < r; ++i)
    for (int v = 0; v < nv; ++v)
      atoms[static_cast<std::size_t>(i)].X(v % m, v / m) = z(i * nv + v);
}

// Rebuilds the pseudo-moment vector of an atomic measure, re-runs the rank
// and flatness analysis on it, and installs the result in the report.
void adopt_measure(EnvelopeReport& rep, std::vector<Atom> atoms, const SemialgebraicDomain& dom,
                   const EnvelopeSettings& settings) {
  const int nv = rep.y.nv;
  for (std::size_t idx = 0; idx < rep.y.monomials.size(); ++idx) {
    const Exponent& e = rep.y.monomials[idx];
    double m = 0.0;
    for (const Atom& a : atoms) {
      const std::vector<double> coords = flatten(a.X);
      double t = a.weight;
      for (int v = 0; v < nv; ++v)
        for (int rep_pow = 0; rep_pow < e[static_cast<std::size_t>(v)]; ++rep_pow)
          t *= coords[static_cast<std::size_t>(v)];
      m += t;
    }
    rep.y.values[static_cast<Eigen::Index>(idx)] = m;
  }
  const FlatCheck fc = flat_extension_detail(rep.y, dom, settings.rank_tol);
  rep.ranks = fc.ranks;
  if (fc.flat) rep.flat_rank = fc.ranks.back();
  if (fc.strict_flat) rep.strict_flat_rank = fc.ranks.back();
  rep.atoms = std::move(atoms);
}

bool atoms_in_domain(const std::vector<Atom>& atoms, const SemialgebraicDomain& dom) {
  for (const PolyQ& g : dom.constraints) {
    const PolyD gd = to_float(g);
    for (const Atom& a : atoms)
      if (gd.eval(flatten(a.X)) < -1e-9) return false;
  }
  return true;
}

void check_inputs(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p,
                  const Eigen::MatrixXd* X, int k) {
  const int nv = p.space.total();
  if (f.nvars() != nv)
    throw std::invalid_argument("envelope: f lives on the wrong matrix space");
  for (const PolyQ& g : dom.constraints)
    if (g.nvars() != nv)
      throw std::invalid_argument("envelope: domain constraint lives on the wrong matrix space");
  if (X != nullptr && (X->rows() != p.space.m || X->cols() != p.space.n))
    throw std::invalid_argument("envelope: query matrix has the wrong shape");
  int need = std::max(f.degree(), std::min(p.space.m, p.space.n));
  for (const PolyQ& g : dom.constraints) need = std::max(need, g.degree());
  if (2 * k < need)
    throw std::invalid_argument(
        "order too small: 2k must be at least max(deg f, deg of every domain constraint, "
        "min(m, n))");
}

}  // namespace

std::string to_string(EnvelopeStatus s) {
  switch (s) {
    case EnvelopeStatus::ExactByMatch: return "ExactByMatch";
    case EnvelopeStatus::ExactByFlat: return "ExactByFlat";
    case EnvelopeStatus::LowerBound: return "LowerBound";
    case EnvelopeStatus::SolverIssue: return "SolverIssue";
  }
  return "?";
}

std::string PseudoMomentVector::label(int idx) const {
  std::string s = "y_";
  for (int e : monomials[static_cast<std::size_t>(idx)]) s += std::to_string(e);
  return s;
}

double PseudoMomentVector::value_of(const Exponent& a) const {
  const auto it = std::lower_bound(monomials.begin(), monomials.end(), a, GradedLexLess{});
  if (it == monomials.end() || *it != a)
    throw std::out_of_range("PseudoMomentVector: moment outside the order-2k truncation");
  return values[it - monomials.begin()];
}

Eigen::MatrixXd moment_matrix(const PseudoMomentVector& y, int j) {
  if (j < 0 || j > y.k)
    throw std::invalid_argument("moment_matrix: order must lie in [0, k]");
  const std::vector<Exponent> basis = monomial_basis(y.nv, j);
  const int B = static_cast<int>(basis.size());
  Eigen::MatrixXd M(B, B);
  for (int a = 0; a < B; ++a)
    for (int b = a; b < B; ++b)
      M(a, b) = M(b, a) = y.value_of(detail::exp_add(basis[a], basis[b]));
  return M;
}

int minimal_order(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p) {
  int need = std::max(f.degree(), std::min(p.space.m, p.space.n));
  for (const PolyQ& g : dom.constraints) need = std::max(need, g.degree());
  return half_up(need);
}

MomentRelaxation build_moment_relaxation(const PolyQ& f, const SemialgebraicDomain& dom,
                                         const MinorsMap& p, const Eigen::MatrixXd& X, int k) {
  check_inputs(f, dom, p, &X, k);
  const int nv = p.space.total();

  MomentRelaxation rel;
  rel.k = k;
  rel.monomials = monomial_basis(nv, 2 * k);
  std::map<Exponent, int, GradedLexLess> pos;
  for (std::size_t i = 0; i < rel.monomials.size(); ++i)
    pos.emplace(rel.monomials[i], static_cast<int>(i));
  const auto at = [&pos](const Exponent& e) { return pos.at(e); };

  ConeProgram& prog = rel.program;
  prog.sense = Sense::Min;
  for (std::size_t i = 0; i < rel.monomials.size(); ++i) prog.add_var(0.0);
  for (const auto& [e, c] : f.terms()) prog.objective[at(e)] += to_double(c);

  // Equality rows in the fixed order [l_y(1) = 1, l_y(p_a) = p_a(X)]: the
  // multipliers of a minimizing solve read back as (v, u).
  {
    EqRow one;
    one.coeffs.push_back({at(Exponent(nv, 0)), 1.0});
    one.rhs = 1.0;
    prog.equalities.push_back(std::move(one));
  }
  const std::vector<PolyQ> psym = minors_symbolic(p);
  const std::vector<double> pval = minors_eval(p, X);
  for (int a = 0; a < p.N(); ++a) {
    EqRow row;
    for (const auto& [e, c] : psym[a].terms()) row.coeffs.push_back({at(e), to_double(c)});
    row.rhs = pval[a];
    prog.equalities.push_back(std::move(row));
  }

  // Localizing matrix M_{order}(g y); g = 1 at order k is the moment matrix.
  const auto add_localizing = [&](const PolyQ& g, int order) {
    const std::vector<Exponent> basis = monomial_basis(nv, order);
    LmiBlock blk;
    blk.dim = static_cast<int>(basis.size());
    for (int a = 0; a < blk.dim; ++a)
      for (int b = a; b < blk.dim; ++b) {
        const Exponent ab = detail::exp_add(basis[a], basis[b]);
        for (const auto& [ge, gc] : g.terms())
          blk.entries.push_back({at(detail::exp_add(ab, ge)), a, b, to_double(gc)});
      }
    prog.psd_blocks.push_back(std::move(blk));
  };
  add_localizing(PolyQ::constant(nv, Rational(1)), k);
  for (const PolyQ& g : dom.constraints) add_localizing(g, k - half_up(g.degree()));
  return rel;
}

DualSosProgram build_dual_sos(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p,
                              const Eigen::MatrixXd& X, int k) {
  check_inputs(f, dom, p, &X, k);
  const int nv = p.space.total();

  DualSosProgram dsp;
  ConeProgram& prog = dsp.program;
  prog.sense = Sense::Max;

  std::map<Exponent, std::map<int, double>, GradedLexLess> rows;

  dsp.v_var = prog.add_var(1.0);
  rows[Exponent(nv, 0)][dsp.v_var] += 1.0;
  const std::vector<PolyQ> psym = minors_symbolic(p);
  const std::vector<double> pval = minors_eval(p, X);
  for (int a = 0; a < p.N(); ++a) {
    const int u = prog.add_var(pval[a]);
    dsp.u_vars.push_back(u);
    for (const auto& [e, c] : psym[a].terms()) rows[e][u] += to_double(c);
  }

  const auto add_gram = [&](const PolyQ& mult, int order) {
    const std::vector<Exponent> basis = monomial_basis(nv, order);
    const int B = static_cast<int>(basis.size());
    const auto grid = add_psd_matrix_variable(prog, B);
    for (int a = 0; a < B; ++a)
      for (int b = a; b < B; ++b) {
        const Exponent ab = detail::exp_add(basis[a], basis[b]);
        const double sym = (a == b) ? 1.0 : 2.0;
        for (const auto& [me, mc] : mult.terms())
          rows[detail::exp_add(ab, me)][grid[a][b]] += sym * to_double(mc);
      }
  };
  add_gram(PolyQ::constant(nv, Rational(1)), k);
  for (const PolyQ& g : dom.constraints) add_gram(g, k - half_up(g.degree()));

  for (const auto& [e, c] : f.terms()) rows[e];  // ensure a row per f monomial
  for (auto& [e, coeffs] : rows) {
    EqRow row;
    for (const auto& [var, c] : coeffs)
      if (c != 0.0) row.coeffs.push_back({var, c});
    row.rhs = to_double(f.coeff(e));
    if (row.coeffs.empty()) continue;  // cannot happen: sigma_0 spans deg <= 2k
    prog.equalities.push_back(std::move(row));
  }
  return dsp;
}

bool check_match(EnvelopeReport& report, const PolyQ& f, const Eigen::MatrixXd& X, double tol) {
  if (report.status == EnvelopeStatus::SolverIssue) return false;
  const double fX = eval_at(f, X);
  if (!(std::abs(report.value - fX) <= tol * (1.0 + std::abs(fX)))) return false;
  if (report.status != EnvelopeStatus::ExactByMatch) {
    report.status = EnvelopeStatus::ExactByMatch;
    report.message += "moment value matches f(X): f is polyconvex at X; ";
  }
  return true;
}

FlatCheck flat_extension_detail(const PseudoMomentVector& y, const SemialgebraicDomain& dom,
                                double rank_tol) {
  FlatCheck fc;
  fc.d_flat = std::max(1, half_up(dom.max_degree()));
  fc.strict_gap = dom.max_degree();
  for (int j = 0; j <= y.k; ++j) fc.ranks.push_back(numeric_rank(moment_matrix(y, j), rank_tol));
  const int rk = fc.ranks.back();
  fc.flat = y.k - fc.d_flat >= 0 && fc.ranks[static_cast<std::size_t>(y.k - fc.d_flat)] == rk;
  fc.strict_flat =
      y.k - fc.strict_gap >= 0 && fc.ranks[static_cast<std::size_t>(y.k - fc.strict_gap)] == rk;
  return fc;
}

std::optional<int> check_flat_extension(const PseudoMomentVector& y,
                                        const SemialgebraicDomain& dom, double rank_tol) {
  const FlatCheck fc = flat_extension_detail(y, dom, rank_tol);
  if (!fc.flat) return std::nullopt;
  return fc.ranks.back();
}

ExtractionResult extract_atoms(const PseudoMomentVector& y, int r, const MinorsMap& p,
                               const SemialgebraicDomain& dom, const EnvelopeSettings& settings) {
  ExtractionResult res;
  const int nv = y.nv;
  if (r <= 0) {
    res.message = "rank must be positive";
    return res;
  }
  const int d = y.k - std::max(1, half_up(dom.max_degree()));
  if (d < 0) {
    res.message = "relaxation order leaves no room below the flatness gap";
    return res;
  }

  // Truncated pivoted Cholesky of M_d selects r quotient-basis monomials.
  const std::vector<Exponent> basis = monomial_basis(nv, d);
  const int L = static_cast<int>(basis.size());
  const Eigen::MatrixXd M = moment_matrix(y, d);
  Eigen::MatrixXd R = M;
  std::vector<int> piv;
  std::vector<bool> used(static_cast<std::size_t>(L), false);
  const double floor = 1e-10 * std::max(1.0, M.diagonal().maxCoeff());
  for (int step = 0; step < r; ++step) {
    int best = -1;
    for (int i = 0; i < L; ++i)
      if (!used[static_cast<std::size_t>(i)] && (best < 0 || R(i, i) > R(best, best))) best = i;
    if (best < 0 || R(best, best) <= floor) {
      res.message = "moment matrix has fewer numerical pivots than the flat rank";
      return res;
    }
    used[static_cast<std::size_t>(best)] = true;
    piv.push_back(best);
    R -= (R.col(best) * R.row(best)) / R(best, best);
  }

  Eigen::MatrixXd G(r, r);
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b) G(a, b) = M(piv[a], piv[b]);
  const Eigen::LDLT<Eigen::MatrixXd> factor(G);

  // Multiplication operators N_v on the quotient basis: G N_v = [y_{b_a+b_b+e_v}].
  std::vector<Eigen::MatrixXd> mult(static_cast<std::size_t>(nv));
  for (int v = 0; v < nv; ++v) {
    Eigen::MatrixXd rhs(r, r);
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < r; ++b) {
        Exponent e = detail::exp_add(basis[piv[a]], basis[piv[b]]);
        e[v] += 1;
        rhs(a, b) = y.value_of(e);
      }
    mult[static_cast<std::size_t>(v)] = factor.solve(rhs);
  }

  for (int v = 0; v < nv; ++v)
    for (int w = v + 1; w < nv; ++w) {
      const Eigen::MatrixXd comm = mult[v] * mult[w] - mult[w] * mult[v];
      const double scale =
          1.0 + mult[v].cwiseAbs().maxCoeff() * mult[w].cwiseAbs().maxCoeff();
      if (comm.cwiseAbs().maxCoeff() > 1e-4 * scale) {
        res.message = "multiplication operators do not commute within tolerance";
        return res;
      }
    }

  // Simultaneous diagonalization through the ordered Schur form of a random
  // (seeded) convex combination.
  std::mt19937 rng(settings.seed);
  std::uniform_real_distribution<double> uni(0.1, 1.0);
  Eigen::VectorXd lam(nv);
  for (int v = 0; v < nv; ++v) lam[v] = uni(rng);
  lam /= lam.sum();
  Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(r, r);
  for (int v = 0; v < nv; ++v) mix += lam[v] * mult[static_cast<std::size_t>(v)];
  const Eigen::RealSchur<Eigen::MatrixXd> schur(mix);
  if (schur.info() != Eigen::Success) {
    res.message = "Schur decomposition did not converge";
    return res;
  }
  const Eigen::MatrixXd& T = schur.matrixT();
  const Eigen::MatrixXd& U = schur.matrixU();
  for (int i = 0; i + 1 < r; ++i)
    if (std::abs(T(i + 1, i)) > 1e-9 * (1.0 + std::abs(T(i, i)) + std::abs(T(i + 1, i + 1)))) {
      res.message = "complex eigenvalue block: the representing measure is not real-atomic";
      return res;
    }

  Eigen::MatrixXd coords(nv, r);  // column j = flattened atom j
  for (int v = 0; v < nv; ++v) {
    const Eigen::MatrixXd A = U.transpose() * mult[static_cast<std::size_t>(v)] * U;
    for (int j = 0; j < r; ++j) coords(v, j) = A(j, j);
  }

  // Weights by least squares against the full pseudo-moment vector.
  const int n_mono = static_cast<int>(y.monomials.size());
  Eigen::MatrixXd V(n_mono, r);
  for (int row = 0; row < n_mono; ++row)
    for (int j = 0; j < r; ++j) {
      double t = 1.0;
      const Exponent& e = y.monomials[static_cast<std::size_t>(row)];
      for (int v = 0; v < nv; ++v)
        for (int q = 0; q < e[v]; ++q) t *= coords(v, j);
      V(row, j) = t;
    }
  const Eigen::VectorXd w = V.colPivHouseholderQr().solve(y.values);

  if (std::abs(w.sum() - 1.0) > 1e-6) {
    res.message = "atom weights do not sum to 1";
    return res;
  }
  if (w.minCoeff() <= 1e-10) {
    res.message = "atom weights are not strictly positive";
    return res;
  }
  const double recon = (V * w - y.values).cwiseAbs().maxCoeff();
  if (recon > settings.atom_tol) {
    res.message = "atoms do not reconstruct the pseudo-moments within tolerance";
    return res;
  }
  for (const PolyQ& g : dom.constraints) {
    const PolyD gf = to_float(g);
    for (int j = 0; j < r; ++j) {
      std::vector<double> x(static_cast<std::size_t>(nv));
      for (int v = 0; v < nv; ++v) x[static_cast<std::size_t>(v)] = coords(v, j);
      if (gf.eval(x) < -1e-6) {
        res.message = "an atom violates a domain constraint";
        return res;
      }
    }
  }

  std::vector<int> order(static_cast<std::size_t>(r));
  for (int j = 0; j < r; ++j) order[static_cast<std::size_t>(j)] = j;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (int v = 0; v < nv; ++v) {
      if (coords(v, a) < coords(v, b)) return true;
      if (coords(v, a) > coords(v, b)) return false;
    }
    return w[a] < w[b];
  });
  for (int idx : order) {
    Atom atom;
    atom.X.resize(p.space.m, p.space.n);
    for (int c = 0; c < p.space.n; ++c)
      for (int rr = 0; rr < p.space.m; ++rr) atom.X(rr, c) = coords(c * p.space.m + rr, idx);
    atom.weight = w[idx];
    res.atoms.push_back(std::move(atom));
  }
  res.ok = true;
  return res;
}

EnvelopeReport envelope_at(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p,
                           const Eigen::MatrixXd& X, int k, const EnvelopeSettings& settings) {
  EnvelopeReport rep;
  rep.X = X;
  rep.k = k;
  rep.value = kNaN;
  rep.dual_value = kNaN;
  rep.v = kNaN;
  rep.u = Eigen::VectorXd::Constant(p.N(), kNaN);
  rep.f_at_X = eval_at(f, X);
  if (X.norm() > 10.0)
    rep.message += "query matrix norm exceeds 10: moment scaling may be ill-conditioned; ";

  MomentRelaxation rel = build_moment_relaxation(f, dom, p, X, k);
  const Solution sol = solve(rel.program, settings.solver);
  rep.solver_status = sol.status;
  if (!detail::solved(sol)) {
    rep.status = EnvelopeStatus::SolverIssue;
    rep.message += "moment solve failed: " + sol.message;
    return rep;
  }
  if (sol.status == SolveStatus::Inaccurate)
    rep.message += "moment solve inaccurate (" + sol.message + "); ";

  rep.value = sol.objective;
  rep.y.nv = p.space.total();
  rep.y.k = k;
  rep.y.monomials = std::move(rel.monomials);
  rep.y.values = sol.x;

  // Dual certificate: equality multipliers of the minimizing solve, replaced
  // by the independent SOS solve when that one succeeds (its conventions are
  // explicit rather than solver-internal).
  const std::vector<double> pval = minors_eval(p, X);
  if (sol.eq_duals.size() == static_cast<std::size_t>(p.N()) + 1) {
    rep.v = sol.eq_duals[0];
    for (int a = 0; a < p.N(); ++a) rep.u[a] = sol.eq_duals[a + 1];
    rep.dual_value = rep.v;
    for (int a = 0; a < p.N(); ++a) rep.dual_value += rep.u[a] * pval[a];
  }
  if (settings.solve_dual) {
    const DualSosProgram dual = build_dual_sos(f, dom, p, X, k);
    const Solution ds = solve(dual.program, settings.solver);
    rep.dual_solver_status = ds.status;
    if (detail::solved(ds)) {
      rep.v = ds.x[dual.v_var];
      for (int a = 0; a < p.N(); ++a) rep.u[a] = ds.x[dual.u_vars[a]];
      rep.dual_value = ds.objective;
    } else {
      rep.message += "dual solve failed (" + ds.message + "): kept primal multipliers; ";
    }
  }

  rep.status = EnvelopeStatus::LowerBound;
  const FlatCheck fc = flat_extension_detail(rep.y, dom, settings.rank_tol);
  rep.ranks = fc.ranks;
  check_match(rep, f, X, settings.match_tol);
  if (fc.flat) {
    rep.flat_rank = fc.ranks.back();
    if (rep.status != EnvelopeStatus::ExactByMatch) rep.status = EnvelopeStatus::ExactByFlat;
    ExtractionResult ext = extract_atoms(rep.y, rep.flat_rank, p, dom, settings);
    if (ext.ok)
      rep.atoms = std::move(ext.atoms);
    else
      rep.message += "atom extraction: " + ext.message + "; ";
  }
  if (fc.strict_flat) rep.strict_flat_rank = fc.ranks.back();

  // Certificate cleanup: when an optimal atomic measure is in hand, the
  // interior-point pseudo-moments (noisy at rank-deficient optima) are
  // replaced by the measure's exact moments.
  if (rep.status == EnvelopeStatus::ExactByMatch) {
    // A matching value means the Dirac measure at X itself attains it.
    std::vector<Atom> dirac{Atom{X, 1.0}};
    if (atoms_in_domain(dirac, dom)) {
      adopt_measure(rep, std::move(dirac), dom, settings);
      rep.message += "pseudo-moments set to the Dirac measure at X, an exact optimizer here; ";
    }
  } else if (!rep.atoms.empty()) {
    const std::vector<PolyQ> psym = minors_symbolic(p);
    const PolyD fd = to_float(f);
    std::vector<PolyD> fgrad;
    for (const PolyQ& gq : f.gradient()) fgrad.push_back(to_float(gq));
    std::vector<PolyD> pd;
    std::vector<std::vector<PolyD>> pgrad;
    for (const PolyQ& pq : psym) {
      pd.push_back(to_float(pq));
      std::vector<PolyD> g;
      for (const PolyQ& gq : pq.gradient()) g.push_back(to_float(gq));
      pgrad.push_back(std::move(g));
    }
    std::vector<Atom> atoms = rep.atoms;
    const double rho = 1e3 * (1.0 + std::abs(rep.f_at_X));
    bool ok = true;
    for (int round = 0; round < 3 && ok; ++round) {
      descend_positions(atoms, fd, fgrad, pd, pgrad, pval, rho, 60);
      ok = refit_weights(atoms, pd, pval);
    }
    if (ok && atoms_in_domain(atoms, dom)) {
      const double obj = measure_objective(fd, atoms);
      if (obj < rep.value) {
        char note[160];
        std::snprintf(note, sizeof note,
                      "measure polishing improved the value from %.6e to %.6e; ", rep.value, obj);
        rep.value = obj;
        adopt_measure(rep, std::move(atoms), dom, settings);
        rep.message += note;
      }
    }
  }
  return rep;
}

std::vector<EnvelopeReport> hierarchy(const PolyQ& f, const SemialgebraicDomain& dom,
                                      const MinorsMap& p, const Eigen::MatrixXd& X, int k_min,
                                      int k_max, const EnvelopeSettings& settings) {
  std::vector<EnvelopeReport> out;
  for (int k = k_min; k <= k_max; ++k) {
    out.push_back(envelope_at(f, dom, p, X, k, settings));
    const EnvelopeStatus s = out.back().status;
    if (s == EnvelopeStatus::ExactByMatch || s == EnvelopeStatus::ExactByFlat) break;
  }
  return out;
}

std::vector<SweepRow> sweep(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p,
                            const std::function<Eigen::MatrixXd(double)>& path,
                            const std::vector<double>& grid, int k,
                            const EnvelopeSettings& settings) {
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const double t : grid) {
    SweepRow row;
    row.t = t;
    row.value = kNaN;
    try {
      const EnvelopeReport rep = envelope_at(f, dom, p, path(t), k, settings);
      row.value = rep.value;
      row.rank = rep.ranks.empty() ? 0 : rep.ranks.back();
      row.status = rep.status;
    } catch (const std::exception&) {
      row.status = EnvelopeStatus::SolverIssue;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace polycert
