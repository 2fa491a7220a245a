#include "polycert/conic.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

namespace polycert {

namespace detail {
Solution ipm_solve(const ConeProgram& prog, const SolverSettings& settings);
}

std::vector<std::vector<int>> add_psd_matrix_variable(ConeProgram& prog, int dim) {
  if (dim < 1) throw std::invalid_argument("add_psd_matrix_variable: dim must be >= 1");
  std::vector<std::vector<int>> vars(dim, std::vector<int>(dim, -1));
  LmiBlock block;
  block.dim = dim;
  for (int j = 0; j < dim; ++j) {
    for (int i = 0; i <= j; ++i) {
      int v = prog.add_var(0.0);
      vars[i][j] = v;
      vars[j][i] = v;
      block.entries.push_back(LmiEntry{v, i, j, 1.0});
    }
  }
  prog.psd_blocks.push_back(std::move(block));
  return vars;
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::Inaccurate: return "Inaccurate";
    case SolveStatus::Failed: return "Failed";
  }
  return "Failed";
}

SolverSettings SolverSettings::from_env() {
  SolverSettings s;
  if (const char* v = std::getenv("POLYCERT_SOLVER_TOL")) {
    char* end = nullptr;
    double t = std::strtod(v, &end);
    if (end != v && t > 0 && std::isfinite(t)) {
      s.feas_tol = t;
      s.gap_tol = t;
    }
  }
  if (const char* v = std::getenv("POLYCERT_SOLVER_VERBOSE"))
    s.verbose = v[0] != '\0' && v[0] != '0';
  return s;
}

Eigen::MatrixXd lmi_eval(const LmiBlock& block, const Eigen::VectorXd& x) {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(block.dim, block.dim);
  for (const auto& [pos, v] : block.f0) {
    F(pos.first, pos.second) = v;
    F(pos.second, pos.first) = v;
  }
  for (const auto& e : block.entries) {
    double add = e.value * x(e.var);
    F(e.i, e.j) += add;
    if (e.i != e.j) F(e.j, e.i) += add;
  }
  return F;
}

PsdCheck psd_check(const Eigen::MatrixXd& A, double tol) {
  if (A.rows() != A.cols()) throw std::invalid_argument("psd_check: matrix must be square");
  double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument("psd_check: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  PsdCheck out;
  out.min_eigenvalue = A.rows() == 0 ? 0.0 : es.eigenvalues().minCoeff();
  out.psd = out.min_eigenvalue >= -tol;
  return out;
}

int numeric_rank(const Eigen::MatrixXd& A, double tol_rel) {
  if (A.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  int r = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) >= tol_rel * sv(0)) ++r;
  return r;
}

std::string dump_program(const ConeProgram& prog) {
  std::string out;
  char line[160];
  auto emit = [&](const char* fmt, auto... args) {
    std::snprintf(line, sizeof line, fmt, args...);
    out += line;
  };
  emit("polycert-sdp 1\n");
  emit("sense %s\n", prog.sense == Sense::Min ? "min" : "max");
  emit("vars %d\n", prog.num_vars);
  emit("offset %.17g\n", prog.obj_offset);
  emit("equalities %zu\n", prog.equalities.size());
  emit("blocks %zu\n", prog.psd_blocks.size());
  for (int v = 0; v < static_cast<int>(prog.objective.size()); ++v)
    if (prog.objective[v] != 0.0) emit("obj %d %.17g\n", v, prog.objective[v]);
  for (std::size_t r = 0; r < prog.equalities.size(); ++r) {
    emit("rhs %zu %.17g\n", r, prog.equalities[r].rhs);
    for (const auto& [var, coef] : prog.equalities[r].coeffs)
      emit("A %zu %d %.17g\n", r, var, coef);
  }
  for (std::size_t j = 0; j < prog.psd_blocks.size(); ++j) {
    const auto& blk = prog.psd_blocks[j];
    emit("dim %zu %d\n", j, blk.dim);
    for (const auto& [pos, v] : blk.f0) emit("F0 %zu %d %d %.17g\n", j, pos.first, pos.second, v);
    for (const auto& e : blk.entries) emit("F %zu %d %d %d %.17g\n", j, e.var, e.i, e.j, e.value);
  }
  return out;
}

namespace {

double dual_objective_min_form(const ConeProgram& prog, const Solution& sol) {
  double d = 0.0;
  for (std::size_t r = 0; r < prog.equalities.size(); ++r)
    d += prog.equalities[r].rhs * sol.eq_duals(static_cast<int>(r));
  for (std::size_t j = 0; j < prog.psd_blocks.size(); ++j) {
    const auto& blk = prog.psd_blocks[j];
    for (const auto& [pos, v] : blk.f0) {
      double z = sol.psd_duals[j](pos.first, pos.second);
      d -= v * z * (pos.first == pos.second ? 1.0 : 2.0);
    }
  }
  return d;
}

// Residuals recomputed from scratch; never trusts the backend's accounting.
Residuals recompute_residuals(const ConeProgram& prog, Solution& sol, double pobj_min) {
  Residuals res;
  double bmax = 1.0;
  for (const auto& row : prog.equalities) bmax = std::max(bmax, std::abs(row.rhs));
  for (const auto& row : prog.equalities) {
    double v = -row.rhs;
    for (const auto& [var, coef] : row.coeffs) v += coef * sol.x(var);
    res.primal_inf = std::max(res.primal_inf, std::abs(v) / bmax);
  }
  double compl_abs = 0.0;
  for (std::size_t j = 0; j < prog.psd_blocks.size(); ++j) {
    Eigen::MatrixXd F = lmi_eval(prog.psd_blocks[j], sol.x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(F, Eigen::EigenvaluesOnly);
    double lam = F.rows() == 0 ? 0.0 : es.eigenvalues().minCoeff();
    double fs = 1.0 + F.cwiseAbs().maxCoeff();
    res.primal_inf = std::max(res.primal_inf, std::max(0.0, -lam) / fs);
    if (j < sol.psd_duals.size() && sol.psd_duals[j].rows() == F.rows())
      compl_abs = std::max(compl_abs, std::abs((F.array() * sol.psd_duals[j].array()).sum()));
  }
  // Stationarity: c - A^T y - sum_j F_j^*(Z_j).
  Eigen::VectorXd rd = Eigen::VectorXd::Zero(prog.num_vars);
  for (int v = 0; v < prog.num_vars && v < static_cast<int>(prog.objective.size()); ++v)
    rd(v) = prog.objective[v];
  double cmax = 1.0 + rd.cwiseAbs().maxCoeff();
  for (std::size_t r = 0; r < prog.equalities.size(); ++r)
    for (const auto& [var, coef] : prog.equalities[r].coeffs)
      rd(var) -= coef * sol.eq_duals(static_cast<int>(r));
  for (std::size_t j = 0; j < prog.psd_blocks.size(); ++j) {
    if (j >= sol.psd_duals.size()) continue;
    const auto& Z = sol.psd_duals[j];
    for (const auto& e : prog.psd_blocks[j].entries)
      rd(e.var) -= e.value * Z(e.i, e.j) * (e.i == e.j ? 1.0 : 2.0);
  }
  res.dual_inf = rd.cwiseAbs().maxCoeff() / cmax;
  double dobj = dual_objective_min_form(prog, sol);
  res.gap = std::abs(pobj_min - dobj) / (1.0 + std::abs(pobj_min));
  res.compl_slack = compl_abs / (1.0 + std::abs(pobj_min));
  return res;
}

}  // namespace

Solution solve(const ConeProgram& prog, const SolverSettings& settings) {
  ConeProgram work = prog;
  work.objective.resize(work.num_vars, 0.0);
  bool flipped = work.sense == Sense::Max;
  if (flipped) {
    for (auto& c : work.objective) c = -c;
    work.sense = Sense::Min;
  }
  Solution sol = detail::ipm_solve(work, settings);
  if (sol.x.size() != prog.num_vars) sol.x = Eigen::VectorXd::Zero(prog.num_vars);
  if (sol.eq_duals.size() != static_cast<int>(prog.equalities.size()))
    sol.eq_duals = Eigen::VectorXd::Zero(static_cast<int>(prog.equalities.size()));

  if (sol.status == SolveStatus::Optimal || sol.status == SolveStatus::Inaccurate) {
    double pobj_min = 0.0;
    for (int v = 0; v < work.num_vars; ++v) pobj_min += work.objective[v] * sol.x(v);
    sol.residuals = recompute_residuals(work, sol, pobj_min);
    if (sol.status == SolveStatus::Optimal &&
        (sol.residuals.compl_slack > 1e-6 || sol.residuals.gap > 1e-5 ||
         sol.residuals.primal_inf > 50 * settings.feas_tol)) {
      sol.status = SolveStatus::Inaccurate;
      sol.message = "postcheck: residuals exceed certified thresholds";
    }
    sol.objective = pobj_min + work.obj_offset;
    if (flipped) sol.objective = -sol.objective + 2 * work.obj_offset;
  }
  return sol;
}

}  // namespace polycert
