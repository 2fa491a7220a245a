#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <tuple>
#include <vector>

#include "polycert/conic.hpp"

// Dense primal-dual interior-point method for LMI-form cone programs:
//   min c^T x  s.t.  A x = b,  F_j(x) = F0_j + sum_v x_v F_jv >= 0.
// NT scaling with Mehrotra predictor-corrector. Identity-embedding blocks
// (PSD matrix variables) are detected and eliminated analytically, so Gram
// programs cost what they would with native matrix variables. The reduced
// KKT system is solved by block elimination: LMI-touched variables fold into
// a Schur complement M on the equality multipliers, then a quasidefinite
// saddle over (y, u) handles the purely free variables u.

namespace polycert {
namespace detail {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Fraction-to-boundary for line steps.
constexpr double kTau = 0.95;

struct Trip {
  int i, j;
  double v;
};

// Equality row restricted to one identity block: `trip` carries dual-halved
// matrix coefficients for sandwiching, `slots` the unhalved coefficient per
// triangle slot for A^T y assembly.
struct BlockRowSupport {
  int row;
  std::vector<Trip> trip;
  std::vector<std::pair<int, double>> slots;
};

struct Block {
  int dim = 0;
  bool identity = false;
  std::vector<std::tuple<int, int, int>> tri;  // identity: (i, j, var) over i <= j
  std::vector<BlockRowSupport> rows;
  std::vector<int> vars;                       // generic: touched vars
  std::vector<std::vector<Trip>> var_entries;  // generic: entries per var
  MatrixXd F0;

  MatrixXd S, Z;
  MatrixXd W, Winv, Whalf, Whalfinv, Qv;
  VectorXd theta;
};

double dot_halved(const std::vector<Trip>& trip, const MatrixXd& T) {
  double s = 0.0;
  for (const auto& t : trip)
    s += t.i == t.j ? t.v * T(t.i, t.i) : t.v * (T(t.i, t.j) + T(t.j, t.i));
  return s;
}

// out = W * P * W with P given as dual-halved triplets.
void sandwich_into(const std::vector<Trip>& trip, const MatrixXd& W, MatrixXd& out) {
  int d = static_cast<int>(W.rows());
  if (static_cast<int>(trip.size()) > d) {
    MatrixXd P = MatrixXd::Zero(d, d);
    for (const auto& t : trip) {
      P(t.i, t.j) = t.v;
      P(t.j, t.i) = t.v;
    }
    out.noalias() = W * P * W;
    return;
  }
  out.setZero();
  for (const auto& t : trip) {
    out.noalias() += t.v * (W.col(t.i) * W.col(t.j).transpose());
    if (t.i != t.j) out.noalias() += t.v * (W.col(t.j) * W.col(t.i).transpose());
  }
}

MatrixXd sym_sqrt(const MatrixXd& A, bool inverse, double clip = 1e-14) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A);
  VectorXd lam = es.eigenvalues();
  double lo = clip * std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (int i = 0; i < lam.size(); ++i) {
    double l = std::max(lam(i), lo);
    lam(i) = inverse ? 1.0 / std::sqrt(l) : std::sqrt(l);
  }
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

// Largest a in (0, 1] with X + a*D >= 0, damped by tau.
double max_step(const MatrixXd& X, const MatrixXd& D, double tau) {
  if (X.rows() == 0) return 1.0;
  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(D, X,
                                                         Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  double lmin = ges.eigenvalues().minCoeff();
  if (!std::isfinite(lmin)) return 1e-3;
  if (lmin >= 0) return 1.0;
  return std::min(1.0, -tau / lmin);
}

// Degenerate path: no PSD blocks, plain linear algebra.
Solution solve_linear_only(const ConeProgram& prog) {
  int n = prog.num_vars;
  int p = static_cast<int>(prog.equalities.size());
  MatrixXd A = MatrixXd::Zero(p, n);
  VectorXd b = VectorXd::Zero(p);
  for (int r = 0; r < p; ++r) {
    b(r) = prog.equalities[r].rhs;
    for (const auto& [var, coef] : prog.equalities[r].coeffs) A(r, var) += coef;
  }
  VectorXd c = VectorXd::Zero(n);
  for (int v = 0; v < n && v < static_cast<int>(prog.objective.size()); ++v)
    c(v) = prog.objective[v];
  Solution sol;
  sol.eq_duals = VectorXd::Zero(p);
  sol.x = VectorXd::Zero(n);
  if (p == 0) {
    if (n > 0 && c.cwiseAbs().maxCoeff() > 0) {
      sol.status = SolveStatus::Unbounded;
      sol.x = -c.normalized();
      sol.message = "free objective direction";
    } else {
      sol.status = SolveStatus::Optimal;
      sol.objective = prog.obj_offset;
    }
    return sol;
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(A);
  VectorXd x = cod.solve(b);
  if ((A * x - b).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + b.cwiseAbs().maxCoeff())) {
    sol.status = SolveStatus::Infeasible;
    sol.message = "inconsistent equalities";
    return sol;
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> codT(A.transpose());
  VectorXd y = codT.solve(c);
  VectorXd resid = c - A.transpose() * y;
  if (resid.cwiseAbs().maxCoeff() > 1e-8 * (1.0 + c.cwiseAbs().maxCoeff())) {
    sol.status = SolveStatus::Unbounded;
    sol.x = -resid.normalized();
    sol.message = "objective unbounded on the affine set";
    return sol;
  }
  sol.status = SolveStatus::Optimal;
  sol.x = x;
  sol.eq_duals = y;
  sol.objective = c.dot(x) + prog.obj_offset;
  return sol;
}

class Ipm {
 public:
  Ipm(const ConeProgram& prog, const SolverSettings& settings)
      : prog_(prog), settings_(settings) {}

  Solution run();

 private:
  void prepare();
  void compute_scalings();
  void factorize();
  void solve_kkt(const VectorXd& rd, const VectorXd& rp, const std::vector<MatrixXd>& rc,
                 const std::vector<MatrixXd>& rs, VectorXd& dx, VectorXd& dy,
                 std::vector<MatrixXd>& dS, std::vector<MatrixXd>& dZ);
  bool try_infeasibility(Solution& sol);
  bool try_unbounded(Solution& sol);
  Solution finish(SolveStatus status, const std::string& msg);

  const ConeProgram& prog_;
  SolverSettings settings_;

  int nx_ = 0, p_ = 0;
  VectorXd c_;
  double cscale_ = 1.0;
  std::vector<EqRow> eqs_;
  std::vector<double> row_scale_;
  VectorXd b_;
  std::vector<Block> blocks_;

  std::vector<int> var_class_;  // 0 free, 1 identity-block, 2 generic-touched
  std::vector<int> u_vars_, w2_vars_;
  std::vector<int> w2_local_;
  MatrixXd Au_, Aw2_;

  VectorXd x_, y_;
  double mu_ = 0.0, pobj_ = 0.0, dobj_ = 0.0;
  int total_dim_ = 0;

  // Best iterates seen so far, primal and dual tracked separately.  Degraded
  // exits restore them: near degenerate optima the dual stationarity residual
  // typically bottoms out mid-run and then drifts upward while primal
  // feasibility and the objective keep improving for many more iterations, so
  // no single iterate is best for both sides.  Primal snapshot (x, S): among
  // iterates feasible to tolerance the lower objective wins (the problem is
  // minimized internally, so that is a strict improvement); before any
  // feasible iterate exists, max(primal residual, gap) ranks them.  Dual
  // snapshot (y, Z): ranked by max(dual residual, gap) — the gap term guards
  // against loose early iterates whose dual value overshoots the optimum.
  double snap_prim_err_ = std::numeric_limits<double>::infinity();
  double snap_prim_rp_ = std::numeric_limits<double>::infinity();
  double snap_pobj_ = std::numeric_limits<double>::infinity();
  bool snap_prim_feas_ = false;
  double snap_dual_err_ = std::numeric_limits<double>::infinity();
  double snap_dual_rd_ = std::numeric_limits<double>::infinity();
  double snap_restored_err_ = std::numeric_limits<double>::infinity();
  double best_rp_ = std::numeric_limits<double>::infinity();
  int rp_strikes_ = 0;
  VectorXd snap_x_, snap_y_;
  std::vector<MatrixXd> snap_S_, snap_Z_;
  void take_snapshot(double rel_p, double rel_d, double rel_g);
  void restore_snapshot();
  double snapshot_err() const { return snap_restored_err_; }

  MatrixXd Hw2_, M_;
  Eigen::LLT<MatrixXd> lltH_, lltM_, lltSu_;
  MatrixXd G_, Su_;
  double m_diag_added_ = 0.0;

  int iters_ = 0;
};

void Ipm::prepare() {
  nx_ = prog_.num_vars;
  p_ = static_cast<int>(prog_.equalities.size());
  c_ = VectorXd::Zero(nx_);
  for (int v = 0; v < nx_ && v < static_cast<int>(prog_.objective.size()); ++v)
    c_(v) = prog_.objective[v];
  cscale_ = std::max(1.0, c_.cwiseAbs().maxCoeff());
  c_ /= cscale_;

  eqs_ = prog_.equalities;
  row_scale_.assign(p_, 1.0);
  b_ = VectorXd::Zero(p_);
  for (int r = 0; r < p_; ++r) {
    double s = 1.0;
    for (const auto& [var, coef] : eqs_[r].coeffs) s = std::max(s, std::abs(coef));
    row_scale_[r] = s;
    for (auto& [var, coef] : eqs_[r].coeffs) coef /= s;
    eqs_[r].rhs /= s;
    b_(r) = eqs_[r].rhs;
  }

  std::vector<int> touch_count(nx_, 0);
  for (const auto& blk : prog_.psd_blocks)
    for (const auto& e : blk.entries) ++touch_count[e.var];

  for (const auto& src : prog_.psd_blocks) {
    Block blk;
    blk.dim = src.dim;
    total_dim_ += src.dim;
    blk.F0 = MatrixXd::Zero(src.dim, src.dim);
    for (const auto& [pos, v] : src.f0) {
      blk.F0(pos.first, pos.second) = v;
      blk.F0(pos.second, pos.first) = v;
    }
    int want = src.dim * (src.dim + 1) / 2;
    bool identity = blk.F0.isZero(0.0) && static_cast<int>(src.entries.size()) == want;
    if (identity) {
      std::vector<std::vector<int>> seen(src.dim, std::vector<int>(src.dim, -1));
      for (const auto& e : src.entries) {
        if (e.value != 1.0 || e.i > e.j || seen[e.i][e.j] != -1 || touch_count[e.var] != 1) {
          identity = false;
          break;
        }
        seen[e.i][e.j] = e.var;
      }
      if (identity) {
        for (int j = 0; j < src.dim && identity; ++j)
          for (int i = 0; i <= j; ++i)
            if (seen[i][j] < 0) identity = false;
        if (identity) {
          std::vector<bool> used(nx_, false);
          for (int j = 0; j < src.dim && identity; ++j)
            for (int i = 0; i <= j; ++i) {
              if (used[seen[i][j]]) identity = false;
              used[seen[i][j]] = true;
            }
        }
      }
      if (identity)
        for (int j = 0; j < src.dim; ++j)
          for (int i = 0; i <= j; ++i) blk.tri.emplace_back(i, j, seen[i][j]);
    }
    blk.identity = identity;
    if (!identity) {
      std::vector<int> local(nx_, -1);
      for (const auto& e : src.entries) {
        if (local[e.var] < 0) {
          local[e.var] = static_cast<int>(blk.vars.size());
          blk.vars.push_back(e.var);
          blk.var_entries.emplace_back();
        }
        blk.var_entries[local[e.var]].push_back(Trip{e.i, e.j, e.value});
      }
    }
    blocks_.push_back(std::move(blk));
  }

  var_class_.assign(nx_, 0);
  for (const auto& blk : blocks_) {
    if (blk.identity)
      for (const auto& [i, j, var] : blk.tri) var_class_[var] = 1;
    else
      for (int v : blk.vars) var_class_[v] = 2;
  }
  w2_local_.assign(nx_, -1);
  for (int v = 0; v < nx_; ++v) {
    if (var_class_[v] == 0) u_vars_.push_back(v);
    if (var_class_[v] == 2) {
      w2_local_[v] = static_cast<int>(w2_vars_.size());
      w2_vars_.push_back(v);
    }
  }

  // Equality support on identity blocks.
  std::vector<int> slot_block(nx_, -1), slot_idx(nx_, -1);
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
    if (!blocks_[bidx].identity) continue;
    const auto& tri = blocks_[bidx].tri;
    for (std::size_t t = 0; t < tri.size(); ++t) {
      slot_block[std::get<2>(tri[t])] = static_cast<int>(bidx);
      slot_idx[std::get<2>(tri[t])] = static_cast<int>(t);
    }
  }
  std::vector<std::vector<BlockRowSupport>> per_block(blocks_.size());
  for (int r = 0; r < p_; ++r) {
    std::vector<BlockRowSupport*> open(blocks_.size(), nullptr);
    for (const auto& [var, coef] : eqs_[r].coeffs) {
      int bidx = slot_block[var];
      if (bidx < 0) continue;
      if (!open[bidx]) {
        per_block[bidx].push_back(BlockRowSupport{r, {}, {}});
        open[bidx] = &per_block[bidx].back();
      }
      int t = slot_idx[var];
      auto [i, j, v_] = blocks_[bidx].tri[t];
      open[bidx]->trip.push_back(Trip{i, j, i == j ? coef : coef / 2.0});
      open[bidx]->slots.emplace_back(t, coef);
    }
  }
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx)
    blocks_[bidx].rows = std::move(per_block[bidx]);

  Au_ = MatrixXd::Zero(p_, static_cast<int>(u_vars_.size()));
  Aw2_ = MatrixXd::Zero(p_, static_cast<int>(w2_vars_.size()));
  std::vector<int> u_local(nx_, -1);
  for (std::size_t k = 0; k < u_vars_.size(); ++k) u_local[u_vars_[k]] = static_cast<int>(k);
  for (int r = 0; r < p_; ++r)
    for (const auto& [var, coef] : eqs_[r].coeffs) {
      if (u_local[var] >= 0) Au_(r, u_local[var]) += coef;
      if (w2_local_[var] >= 0) Aw2_(r, w2_local_[var]) += coef;
    }

  x_ = VectorXd::Zero(nx_);
  y_ = VectorXd::Zero(p_);
  for (auto& blk : blocks_) {
    double eta = std::max(1.0, blk.F0.norm());
    blk.S = eta * MatrixXd::Identity(blk.dim, blk.dim);
    blk.Z = eta * MatrixXd::Identity(blk.dim, blk.dim);
    if (blk.identity)
      for (const auto& [i, j, var] : blk.tri) x_(var) = i == j ? eta : 0.0;
  }
}

void Ipm::compute_scalings() {
  for (auto& blk : blocks_) {
    MatrixXd Shalf = sym_sqrt(blk.S, false);
    MatrixXd Shalfinv = sym_sqrt(blk.S, true);
    MatrixXd T = Shalf * blk.Z * Shalf;
    blk.W = Shalf * sym_sqrt(T, true) * Shalf;
    blk.W = 0.5 * (blk.W + blk.W.transpose());
    blk.Winv = Shalfinv * sym_sqrt(T, false) * Shalfinv;
    blk.Winv = 0.5 * (blk.Winv + blk.Winv.transpose());
    blk.Whalf = sym_sqrt(blk.W, false);
    blk.Whalfinv = sym_sqrt(blk.W, true);
    MatrixXd V = blk.Whalf * blk.Z * blk.Whalf;
    V = 0.5 * (V + V.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(V);
    blk.Qv = es.eigenvectors();
    blk.theta = es.eigenvalues().cwiseMax(1e-150);
  }
}

void Ipm::factorize() {
  int nw2 = static_cast<int>(w2_vars_.size());
  int nu = static_cast<int>(u_vars_.size());

  if (nw2 > 0) {
    Hw2_ = MatrixXd::Zero(nw2, nw2);
    MatrixXd Ga;
    for (auto& blk : blocks_) {
      if (blk.identity) continue;
      Ga.resize(blk.dim, blk.dim);
      for (std::size_t a = 0; a < blk.vars.size(); ++a) {
        int la = w2_local_[blk.vars[a]];
        // H_ab = <F_b, Winv * F_a * Winv>, F_a assembled from raw entries.
        Ga.setZero();
        for (const auto& t : blk.var_entries[a]) {
          Ga.noalias() += t.v * (blk.Winv.col(t.i) * blk.Winv.col(t.j).transpose());
          if (t.i != t.j)
            Ga.noalias() += t.v * (blk.Winv.col(t.j) * blk.Winv.col(t.i).transpose());
        }
        for (std::size_t bb = 0; bb < blk.vars.size(); ++bb) {
          int lb = w2_local_[blk.vars[bb]];
          if (lb < la) continue;
          double s = 0.0;
          for (const auto& t : blk.var_entries[bb])
            s += t.i == t.j ? t.v * Ga(t.i, t.i) : t.v * (Ga(t.i, t.j) + Ga(t.j, t.i));
          Hw2_(la, lb) += s;
        }
      }
    }
    Hw2_ = Hw2_.selfadjointView<Eigen::Upper>();
    double dw = 1e-10 * (1.0 + Hw2_.diagonal().cwiseAbs().mean());
    Hw2_.diagonal().array() += dw;
    lltH_.compute(Hw2_);
    int guard = 0;
    while (lltH_.info() != Eigen::Success && guard++ < 6) {
      dw *= 1000.0;
      Hw2_.diagonal().array() += dw;
      lltH_.compute(Hw2_);
    }
  }

  M_ = MatrixXd::Zero(p_, p_);
  for (auto& blk : blocks_) {
    if (!blk.identity || blk.rows.empty()) continue;
    MatrixXd T(blk.dim, blk.dim);
    for (std::size_t a = 0; a < blk.rows.size(); ++a) {
      sandwich_into(blk.rows[a].trip, blk.W, T);
      int ra = blk.rows[a].row;
      for (std::size_t bb = a; bb < blk.rows.size(); ++bb) {
        int rb = blk.rows[bb].row;
        double v = dot_halved(blk.rows[bb].trip, T);
        if (ra <= rb)
          M_(ra, rb) += v;
        else
          M_(rb, ra) += v;
      }
    }
  }
  M_ = M_.selfadjointView<Eigen::Upper>();
  if (nw2 > 0) {
    MatrixXd K = lltH_.solve(Aw2_.transpose());
    M_.noalias() += Aw2_ * K;
  }
  m_diag_added_ = 1e-10 * (1.0 + (p_ > 0 ? M_.diagonal().cwiseAbs().mean() : 0.0));
  M_.diagonal().array() += m_diag_added_;
  lltM_.compute(M_);
  int guard = 0;
  while (lltM_.info() != Eigen::Success && guard++ < 6) {
    double bump = m_diag_added_ * 999.0;
    m_diag_added_ *= 1000.0;
    M_.diagonal().array() += bump;
    lltM_.compute(M_);
  }

  if (nu > 0) {
    G_ = lltM_.solve(Au_);
    Su_ = Au_.transpose() * G_;
    double du = 1e-10 * (1.0 + Su_.diagonal().cwiseAbs().mean());
    Su_.diagonal().array() += du;
    lltSu_.compute(Su_);
    guard = 0;
    while (lltSu_.info() != Eigen::Success && guard++ < 6) {
      du *= 1000.0;
      Su_.diagonal().array() += du;
      lltSu_.compute(Su_);
    }
  }
}

void Ipm::solve_kkt(const VectorXd& rd, const VectorXd& rp, const std::vector<MatrixXd>& rc,
                    const std::vector<MatrixXd>& rs, VectorXd& dx, VectorXd& dy,
                    std::vector<MatrixXd>& dS, std::vector<MatrixXd>& dZ) {
  int nw2 = static_cast<int>(w2_vars_.size());
  int nu = static_cast<int>(u_vars_.size());

  // hath = rd_w2 - F^*(Winv (rc - rs) Winv) over generic blocks.
  VectorXd hath = VectorXd::Zero(nw2);
  for (int k = 0; k < nw2; ++k) hath(k) = rd(w2_vars_[k]);
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
    auto& blk = blocks_[bidx];
    if (blk.identity) continue;
    MatrixXd U = blk.Winv * (rc[bidx] - rs[bidx]) * blk.Winv;
    for (std::size_t a = 0; a < blk.vars.size(); ++a) {
      double s = 0.0;
      for (const auto& t : blk.var_entries[a])
        s += t.i == t.j ? t.v * U(t.i, t.i) : t.v * (U(t.i, t.j) + U(t.j, t.i));
      hath(w2_local_[blk.vars[a]]) -= s;
    }
  }

  // g_y = rp + sum over w-vars of A_w H_w^{-1} rhat_dw.
  VectorXd gy = rp;
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
    auto& blk = blocks_[bidx];
    if (!blk.identity || blk.rows.empty()) continue;
    std::vector<Trip> prd;
    prd.reserve(blk.tri.size());
    for (const auto& [i, j, var] : blk.tri)
      prd.push_back(Trip{i, j, i == j ? rd(var) : rd(var) / 2.0});
    MatrixXd T(blk.dim, blk.dim);
    sandwich_into(prd, blk.W, T);
    T -= rc[bidx] - rs[bidx];
    for (const auto& rowsup : blk.rows) gy(rowsup.row) += dot_halved(rowsup.trip, T);
  }
  if (nw2 > 0) gy.noalias() += Aw2_ * lltH_.solve(hath);

  // Saddle over (y, u), then one refinement pass against the true system.
  VectorXd rdu(nu);
  for (int k = 0; k < nu; ++k) rdu(k) = rd(u_vars_[k]);
  VectorXd du = VectorXd::Zero(nu);
  dy = VectorXd::Zero(p_);
  auto saddle = [&](const VectorXd& qy, const VectorXd& qu, VectorXd& oy, VectorXd& ou) {
    VectorXd t1 = p_ > 0 ? VectorXd(lltM_.solve(qy)) : VectorXd::Zero(0);
    if (nu > 0) {
      ou = lltSu_.solve(Au_.transpose() * t1 - qu);
      oy = t1 - G_ * ou;
    } else {
      ou.resize(0);
      oy = t1;
    }
  };
  if (p_ > 0 || nu > 0) {
    // The Schur matrix is formed at a condition number near kappa(W)^2 and
    // carries a small diagonal regularization, so a single solve can lose
    // most of its digits near degenerate optima.  Refine against the true
    // (unregularized) system until the residual stops improving, keeping the
    // best iterate seen.
    saddle(gy, rdu, dy, du);
    const double rhs_scale = 1.0 + gy.cwiseAbs().maxCoeff() +
                             (nu > 0 ? rdu.cwiseAbs().maxCoeff() : 0.0);
    double best_res = std::numeric_limits<double>::infinity();
    VectorXd best_dy, best_du;
    for (int pass = 0; pass < 5; ++pass) {
      VectorXd res_y = gy - M_.selfadjointView<Eigen::Upper>() * dy + m_diag_added_ * dy;
      if (nu > 0) res_y -= Au_ * du;
      VectorXd res_u =
          nu > 0 ? VectorXd(rdu - Au_.transpose() * dy) : VectorXd(VectorXd::Zero(0));
      double r = std::max(p_ > 0 ? res_y.cwiseAbs().maxCoeff() : 0.0,
                          nu > 0 ? res_u.cwiseAbs().maxCoeff() : 0.0);
      if (r < best_res) {
        best_res = r;
        best_dy = dy;
        best_du = du;
      } else {
        break;
      }
      if (r <= 1e-14 * rhs_scale) break;
      VectorXd cy, cu;
      saddle(res_y, res_u, cy, cu);
      dy += cy;
      if (nu > 0) du += cu;
    }
    dy = best_dy;
    if (nu > 0) du = best_du;
  }

  dx = VectorXd::Zero(nx_);
  for (int k = 0; k < nu; ++k) dx(u_vars_[k]) = du(k);

  if (nw2 > 0) {
    VectorXd dw = lltH_.solve(VectorXd(Aw2_.transpose() * dy - hath));
    for (int k = 0; k < nw2; ++k) dx(w2_vars_[k]) = dw(k);
  }

  // Identity-block recovery: dq = vech(W P(A^T dy - rd) W + (rc - rs)).
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
    auto& blk = blocks_[bidx];
    if (!blk.identity) continue;
    std::vector<double> val(blk.tri.size());
    for (std::size_t t = 0; t < blk.tri.size(); ++t) val[t] = -rd(std::get<2>(blk.tri[t]));
    for (const auto& rowsup : blk.rows) {
      double yr = dy(rowsup.row);
      if (yr == 0.0) continue;
      for (const auto& [t, coef] : rowsup.slots) val[t] += coef * yr;
    }
    std::vector<Trip> ptrip;
    ptrip.reserve(blk.tri.size());
    for (std::size_t t = 0; t < blk.tri.size(); ++t) {
      auto [i, j, var] = blk.tri[t];
      ptrip.push_back(Trip{i, j, i == j ? val[t] : val[t] / 2.0});
    }
    MatrixXd T(blk.dim, blk.dim);
    sandwich_into(ptrip, blk.W, T);
    T += rc[bidx] - rs[bidx];
    for (const auto& [i, j, var] : blk.tri) dx(var) = T(i, j);
  }

  dS.resize(blocks_.size());
  dZ.resize(blocks_.size());
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
    auto& blk = blocks_[bidx];
    MatrixXd Flin = MatrixXd::Zero(blk.dim, blk.dim);
    if (blk.identity) {
      for (const auto& [i, j, var] : blk.tri) {
        Flin(i, j) = dx(var);
        Flin(j, i) = dx(var);
      }
    } else {
      for (std::size_t a = 0; a < blk.vars.size(); ++a) {
        double xv = dx(blk.vars[a]);
        if (xv == 0.0) continue;
        for (const auto& t : blk.var_entries[a]) {
          Flin(t.i, t.j) += t.v * xv;
          if (t.i != t.j) Flin(t.j, t.i) += t.v * xv;
        }
      }
    }
    dS[bidx] = Flin + rs[bidx];
    dS[bidx] = 0.5 * (dS[bidx] + dS[bidx].transpose()).eval();
    dZ[bidx] = blk.Winv * (rc[bidx] - dS[bidx]) * blk.Winv;
    dZ[bidx] = 0.5 * (dZ[bidx] + dZ[bidx].transpose()).eval();
  }
}

bool Ipm::try_infeasibility(Solution& sol) {
  double s = dobj_;
  if (s <= 1e-8) return false;
  VectorXd yh = y_ / s;
  double znorm = 0.0;
  for (auto& blk : blocks_) znorm = std::max(znorm, blk.Z.cwiseAbs().maxCoeff() / s);
  VectorXd v = VectorXd::Zero(nx_);
  for (int r = 0; r < p_; ++r)
    for (const auto& [var, coef] : eqs_[r].coeffs) v(var) += coef * yh(r);
  for (auto& blk : blocks_) {
    if (blk.identity) {
      for (const auto& [i, j, var] : blk.tri) v(var) += blk.Z(i, j) / s * (i == j ? 1.0 : 2.0);
    } else {
      for (std::size_t a = 0; a < blk.vars.size(); ++a)
        for (const auto& t : blk.var_entries[a])
          v(blk.vars[a]) += t.v * blk.Z(t.i, t.j) / s * (t.i == t.j ? 1.0 : 2.0);
    }
  }
  double tol = 1e-7 * (1.0 + std::max(yh.cwiseAbs().maxCoeff(), znorm));
  if (v.cwiseAbs().maxCoeff() > tol) return false;
  for (auto& blk : blocks_) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(blk.Z, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8 * s * (1.0 + znorm)) return false;
  }
  sol = finish(SolveStatus::Infeasible, "dual improving ray (Farkas certificate)");
  for (int r = 0; r < p_; ++r) sol.eq_duals(r) = yh(r) / row_scale_[r];
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx)
    sol.psd_duals[bidx] = blocks_[bidx].Z / s;
  return true;
}

bool Ipm::try_unbounded(Solution& sol) {
  double xnorm = x_.norm();
  if (xnorm < 1e6) return false;
  VectorXd xh = x_ / xnorm;
  if (c_.dot(xh) > -1e-9) return false;
  for (int r = 0; r < p_; ++r) {
    double v = 0.0;
    for (const auto& [var, coef] : eqs_[r].coeffs) v += coef * xh(var);
    if (std::abs(v) > 1e-6) return false;
  }
  for (auto& blk : blocks_) {
    MatrixXd Flin = MatrixXd::Zero(blk.dim, blk.dim);
    if (blk.identity) {
      for (const auto& [i, j, var] : blk.tri) {
        Flin(i, j) = xh(var);
        Flin(j, i) = xh(var);
      }
    } else {
      for (std::size_t a = 0; a < blk.vars.size(); ++a)
        for (const auto& t : blk.var_entries[a]) {
          Flin(t.i, t.j) += t.v * xh(blk.vars[a]);
          if (t.i != t.j) Flin(t.j, t.i) += t.v * xh(blk.vars[a]);
        }
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Flin, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-6) return false;
  }
  sol = finish(SolveStatus::Unbounded, "improving primal ray");
  sol.x = xh;
  return true;
}

void Ipm::take_snapshot(double rel_p, double rel_d, double rel_g) {
  const double feas_gate = std::max(settings_.feas_tol, 1e-9);
  const bool feas = rel_p <= feas_gate;
  bool prim_better = false;
  if (feas)
    prim_better = !snap_prim_feas_ || pobj_ < snap_pobj_;
  else if (!snap_prim_feas_)
    prim_better = std::max(rel_p, rel_g) < snap_prim_err_;
  if (prim_better) {
    snap_prim_feas_ = feas;
    snap_prim_err_ = std::max(rel_p, rel_g);
    snap_prim_rp_ = rel_p;
    snap_pobj_ = pobj_;
    snap_x_ = x_;
    snap_S_.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) snap_S_[b] = blocks_[b].S;
  }
  const double derr = std::max(rel_d, rel_g);
  if (derr < snap_dual_err_) {
    snap_dual_err_ = derr;
    snap_dual_rd_ = rel_d;
    snap_y_ = y_;
    snap_Z_.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) snap_Z_[b] = blocks_[b].Z;
  }
}

void Ipm::restore_snapshot() {
  if (std::isfinite(snap_prim_err_)) {
    x_ = snap_x_;
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].S = snap_S_[b];
  }
  if (std::isfinite(snap_dual_err_)) {
    y_ = snap_y_;
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].Z = snap_Z_[b];
  }
  pobj_ = c_.dot(x_);
  dobj_ = b_.dot(y_);
  mu_ = 0.0;
  for (auto& blk : blocks_) {
    dobj_ -= blk.F0.cwiseProduct(blk.Z).sum();
    mu_ += blk.S.cwiseProduct(blk.Z).sum();
  }
  mu_ /= std::max(1, total_dim_);
  // The status gate judges the restored (possibly mixed) pair: each side's
  // own feasibility was recorded when its snapshot was taken, and the gap is
  // recomputed from the reassembled objectives.
  const double gap = std::abs(pobj_ - dobj_) / (1.0 + std::abs(pobj_));
  snap_restored_err_ = std::max({snap_prim_rp_, snap_dual_rd_, gap});
}

Solution Ipm::finish(SolveStatus status, const std::string& msg) {
  Solution sol;
  sol.status = status;
  sol.message = msg;
  sol.iterations = iters_;
  sol.x = x_;
  sol.eq_duals = VectorXd::Zero(p_);
  for (int r = 0; r < p_; ++r) sol.eq_duals(r) = cscale_ * y_(r) / row_scale_[r];
  sol.psd_duals.resize(blocks_.size());
  for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx)
    sol.psd_duals[bidx] = cscale_ * blocks_[bidx].Z;
  sol.objective = cscale_ * c_.dot(x_) + prog_.obj_offset;
  sol.residuals.gap = std::abs(pobj_ - dobj_) / (1.0 + std::abs(pobj_));
  return sol;
}

Solution Ipm::run() {
  prepare();

  {
    std::vector<bool> seen(nx_, false);
    for (const auto& row : eqs_)
      for (const auto& [var, coef] : row.coeffs)
        if (coef != 0.0) seen[var] = true;
    for (int v = 0; v < nx_; ++v)
      if (var_class_[v] != 0) seen[v] = true;
    for (int v = 0; v < nx_; ++v)
      if (!seen[v] && c_(v) != 0.0) {
        Solution sol = finish(SolveStatus::Unbounded, "unconstrained variable with objective weight");
        sol.x = VectorXd::Zero(nx_);
        sol.x(v) = c_(v) > 0 ? -1.0 : 1.0;
        return sol;
      }
  }

  double mu0 = 0.0;
  for (auto& blk : blocks_) mu0 += blk.S.cwiseProduct(blk.Z).sum();
  mu0 /= std::max(1, total_dim_);

  double best_err = std::numeric_limits<double>::infinity();
  int no_progress = 0;
  int tiny_steps = 0;

  std::vector<MatrixXd> rs(blocks_.size()), rc(blocks_.size());
  std::vector<MatrixXd> dSa, dZa, dS, dZ;
  VectorXd dxa, dya, dx, dy;

  for (iters_ = 0; iters_ < settings_.max_iter; ++iters_) {
    VectorXd rp = b_;
    for (int r = 0; r < p_; ++r)
      for (const auto& [var, coef] : eqs_[r].coeffs) rp(r) -= coef * x_(var);
    VectorXd rd = c_;
    for (int r = 0; r < p_; ++r)
      for (const auto& [var, coef] : eqs_[r].coeffs) rd(var) -= coef * y_(r);
    for (auto& blk : blocks_) {
      if (blk.identity) {
        for (const auto& [i, j, var] : blk.tri) rd(var) -= blk.Z(i, j) * (i == j ? 1.0 : 2.0);
      } else {
        for (std::size_t a = 0; a < blk.vars.size(); ++a)
          for (const auto& t : blk.var_entries[a])
            rd(blk.vars[a]) -= t.v * blk.Z(t.i, t.j) * (t.i == t.j ? 1.0 : 2.0);
      }
    }
    double rs_norm = 0.0, f0_norm = 1.0;
    for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
      auto& blk = blocks_[bidx];
      MatrixXd F = blk.F0;
      if (blk.identity) {
        for (const auto& [i, j, var] : blk.tri) {
          F(i, j) += x_(var);
          if (i != j) F(j, i) += x_(var);
        }
      } else {
        for (std::size_t a = 0; a < blk.vars.size(); ++a) {
          double xv = x_(blk.vars[a]);
          for (const auto& t : blk.var_entries[a]) {
            F(t.i, t.j) += t.v * xv;
            if (t.i != t.j) F(t.j, t.i) += t.v * xv;
          }
        }
      }
      rs[bidx] = F - blk.S;
      rs_norm = std::max(rs_norm, rs[bidx].cwiseAbs().maxCoeff());
      f0_norm = std::max(f0_norm, blk.F0.cwiseAbs().maxCoeff());
    }

    mu_ = 0.0;
    for (auto& blk : blocks_) mu_ += blk.S.cwiseProduct(blk.Z).sum();
    mu_ /= std::max(1, total_dim_);
    pobj_ = c_.dot(x_);
    dobj_ = b_.dot(y_);
    for (auto& blk : blocks_) dobj_ -= blk.F0.cwiseProduct(blk.Z).sum();

    double rel_p = std::max(
        p_ > 0 ? rp.cwiseAbs().maxCoeff() / (1.0 + b_.cwiseAbs().maxCoeff()) : 0.0,
        rs_norm / f0_norm);
    double rel_d = rd.cwiseAbs().maxCoeff() / (1.0 + c_.cwiseAbs().maxCoeff());
    double rel_g = std::abs(pobj_ - dobj_) / (1.0 + std::abs(pobj_));
    double mu_rel = mu_ / (1.0 + std::abs(pobj_));

    if (settings_.verbose)
      std::printf("iter %3d  mu %.3e  rp %.3e  rd %.3e  gap %.3e  pobj %.8e\n", iters_, mu_,
                  rel_p, rel_d, rel_g, cscale_ * pobj_);

    if (rel_p <= settings_.feas_tol && rel_d <= settings_.feas_tol &&
        (rel_g <= settings_.gap_tol || mu_rel <= settings_.gap_tol * 1e-2))
      return finish(SolveStatus::Optimal, "converged");

    {
      Solution sol;
      if ((dobj_ > 1e5 || (mu_ < 1e-10 * mu0 && rel_p > settings_.feas_tol)) &&
          try_infeasibility(sol))
        return sol;
      if (try_unbounded(sol)) return sol;
    }

    double err = std::max({rel_p, rel_d, rel_g});
    take_snapshot(rel_p, rel_d, rel_g);
    // Once primal feasibility has been reached, a large sustained relapse
    // means the search directions have degraded into noise (ill-conditioned
    // KKT systems at a degenerate optimum); further iterations only drift.
    // Transient wobbles an order of magnitude above the tolerance do occur in
    // healthy runs, so the exit needs both a high bar and persistence.
    if (rel_p < best_rp_) {
      best_rp_ = rel_p;
      rp_strikes_ = 0;
    } else if (best_rp_ <= settings_.feas_tol &&
               rel_p > std::max(1e3 * best_rp_, 100.0 * settings_.feas_tol)) {
      if (++rp_strikes_ >= 3) {
        restore_snapshot();
        return finish(snapshot_err() < 1e-3 ? SolveStatus::Inaccurate : SolveStatus::Failed,
                      "iterates diverged after peak accuracy: returning best iterates");
      }
    } else {
      rp_strikes_ = 0;
    }
    if (err < 0.92 * best_err) {
      best_err = err;
      no_progress = 0;
    } else if (++no_progress > 18) {
      Solution sol;
      if (try_infeasibility(sol)) return sol;
      if (try_unbounded(sol)) return sol;
      restore_snapshot();
      return finish(snapshot_err() < 1e-3 ? SolveStatus::Inaccurate : SolveStatus::Failed,
                    "stalled without certified progress");
    }

    compute_scalings();
    factorize();

    for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) rc[bidx] = -blocks_[bidx].S;
    solve_kkt(rd, rp, rc, rs, dxa, dya, dSa, dZa);
    double ap = 1.0, ad = 1.0;
    for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
      ap = std::min(ap, max_step(blocks_[bidx].S, dSa[bidx], kTau));
      ad = std::min(ad, max_step(blocks_[bidx].Z, dZa[bidx], kTau));
    }
    double mu_aff = 0.0;
    for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx)
      mu_aff +=
          (blocks_[bidx].S + ap * dSa[bidx]).cwiseProduct(blocks_[bidx].Z + ad * dZa[bidx]).sum();
    mu_aff /= std::max(1, total_dim_);
    double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / std::max(mu_, 1e-300), 3.0), 1e-8, 1.0);

    auto build_rc = [&](double target, bool second_order) {
      for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
        auto& blk = blocks_[bidx];
        MatrixXd R;
        if (second_order) {
          MatrixXd DSa = blk.Whalfinv * dSa[bidx] * blk.Whalfinv;
          MatrixXd DZa = blk.Whalf * dZa[bidx] * blk.Whalf;
          R = -0.5 * (DSa * DZa + DZa * DSa);
        } else {
          R = MatrixXd::Zero(blk.dim, blk.dim);
        }
        R.diagonal().array() += target;
        R.noalias() -= blk.Qv * blk.theta.array().square().matrix().asDiagonal() *
                       blk.Qv.transpose();
        R = 0.5 * (R + R.transpose()).eval();
        MatrixXd B = blk.Qv.transpose() * R * blk.Qv;
        for (int i = 0; i < blk.dim; ++i)
          for (int j = 0; j < blk.dim; ++j) B(i, j) /= 0.5 * (blk.theta(i) + blk.theta(j));
        rc[bidx] = blk.Whalf * (blk.Qv * B * blk.Qv.transpose()) * blk.Whalf;
        rc[bidx] = 0.5 * (rc[bidx] + rc[bidx].transpose()).eval();
      }
    };
    build_rc(sigma * mu_, true);
    solve_kkt(rd, rp, rc, rs, dx, dy, dS, dZ);

    ap = 1.0;
    ad = 1.0;
    for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
      ap = std::min(ap, max_step(blocks_[bidx].S, dS[bidx], kTau));
      ad = std::min(ad, max_step(blocks_[bidx].Z, dZ[bidx], kTau));
    }
    if (std::min(ap, ad) < 0.05) {
      // The combined direction is being truncated to nothing: the iterate has
      // drifted off-center and the second-order correction overshoots.  A
      // pure centering direction (target mu, no second-order term) points
      // back into the cone interior; prefer it when it moves further.
      build_rc(mu_, false);
      solve_kkt(rd, rp, rc, rs, dxa, dya, dSa, dZa);
      double ap2 = 1.0, ad2 = 1.0;
      for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
        ap2 = std::min(ap2, max_step(blocks_[bidx].S, dSa[bidx], kTau));
        ad2 = std::min(ad2, max_step(blocks_[bidx].Z, dZa[bidx], kTau));
      }
      if (std::min(ap2, ad2) > std::min(ap, ad)) {
        dx = dxa;
        dy = dya;
        dS = dSa;
        dZ = dZa;
        ap = ap2;
        ad = ad2;
      }
    }
    if (settings_.verbose)
      std::printf("          sigma %.2e  ap %.2e  ad %.2e\n", sigma, ap, ad);
    if (ap < 1e-7 && ad < 1e-7) {
      if (++tiny_steps >= 3) {
        Solution sol;
        if (try_infeasibility(sol)) return sol;
        if (try_unbounded(sol)) return sol;
        restore_snapshot();
        return finish(snapshot_err() < 1e-3 ? SolveStatus::Inaccurate : SolveStatus::Failed,
                      "step sizes collapsed");
      }
    } else {
      tiny_steps = 0;
    }

    x_ += ap * dx;
    y_ += ad * dy;
    for (std::size_t bidx = 0; bidx < blocks_.size(); ++bidx) {
      auto& blk = blocks_[bidx];
      blk.S += ap * dS[bidx];
      blk.Z += ad * dZ[bidx];
      blk.S = 0.5 * (blk.S + blk.S.transpose()).eval();
      blk.Z = 0.5 * (blk.Z + blk.Z.transpose()).eval();
    }
  }

  Solution sol;
  if (try_infeasibility(sol)) return sol;
  if (try_unbounded(sol)) return sol;
  restore_snapshot();
  return finish(snapshot_err() < 1e-3 ? SolveStatus::Inaccurate : SolveStatus::Failed,
                "iteration limit reached");
}

}  // namespace

Solution ipm_solve(const ConeProgram& prog, const SolverSettings& settings) {
  if (prog.psd_blocks.empty()) return solve_linear_only(prog);
  Ipm ipm(prog, settings);
  return ipm.run();
}

}  // namespace detail
}  // namespace polycert
