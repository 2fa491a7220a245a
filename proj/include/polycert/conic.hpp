#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace polycert {

// One coefficient of an LMI block: variable `var` contributes `value` at the
// symmetric positions (i, j) and (j, i). Entries are stored with i <= j.
struct LmiEntry {
  int var = 0;
  int i = 0;
  int j = 0;
  double value = 0.0;
};

// Affine PSD constraint F(x) = F0 + sum_v x_v F_v  >=  0.
struct LmiBlock {
  int dim = 0;
  std::vector<std::pair<std::pair<int, int>, double>> f0;  // ((i,j), value), i <= j
  std::vector<LmiEntry> entries;
};

struct EqRow {
  std::vector<std::pair<int, double>> coeffs;
  double rhs = 0.0;
};

enum class Sense { Min, Max };

// Cone program over scalar variables x:
//   optimize  c^T x + obj_offset
//   s.t.      A x = b            (equalities)
//             F_j(x) >= 0        (psd blocks)
// Free variables are simply variables appearing in no PSD block.
struct ConeProgram {
  int num_vars = 0;
  Sense sense = Sense::Min;
  std::vector<double> objective;  // length num_vars (missing tail = 0)
  double obj_offset = 0.0;
  std::vector<EqRow> equalities;
  std::vector<LmiBlock> psd_blocks;

  int add_var(double obj_coeff = 0.0) {
    objective.resize(num_vars + 1, 0.0);
    objective[num_vars] = obj_coeff;
    return num_vars++;
  }
};

// Adds dim*(dim+1)/2 fresh scalar variables arranged as a symmetric PSD
// matrix variable (column-major upper triangle), realized as an
// identity-embedding LMI block. Returns the variable index grid: vars[i][j]
// for i <= j (vars[j][i] mirrors it).
std::vector<std::vector<int>> add_psd_matrix_variable(ConeProgram& prog, int dim);

enum class SolveStatus { Optimal, Infeasible, Unbounded, Inaccurate, Failed };

std::string to_string(SolveStatus s);

struct Residuals {
  double primal_inf = 0.0;   // max equality violation and PSD infeasibility
  double dual_inf = 0.0;     // stationarity residual
  double gap = 0.0;          // |pobj - dobj| / (1 + |pobj|)
  double compl_slack = 0.0;  // max_j |<F_j(x), Z_j>| / (1 + |pobj|)
};

struct Solution {
  SolveStatus status = SolveStatus::Failed;
  Eigen::VectorXd x;                  // primal point; improving ray if Unbounded
  Eigen::VectorXd eq_duals;           // multipliers y for A x = b (min-form convention)
  std::vector<Eigen::MatrixXd> psd_duals;  // Z_j >= 0; Farkas certificate if Infeasible
  double objective = 0.0;             // in the program's own sense
  Residuals residuals;
  int iterations = 0;
  std::string message;
};

struct SolverSettings {
  double feas_tol = 1e-8;
  double gap_tol = 1e-8;
  int max_iter = 120;
  bool verbose = false;

  // Reads POLYCERT_SOLVER_TOL (scales feas_tol and gap_tol) if set.
  static SolverSettings from_env();
};

// Interior-point solve (NT scaling, predictor-corrector). Postconditions are
// re-verified outside the iteration: an Optimal status implies the residual
// fields meet feas_tol / 1e-6 complementarity / 1e-5 relative gap, otherwise
// the status is downgraded to Inaccurate.
Solution solve(const ConeProgram& prog, const SolverSettings& settings = {});

// Symmetric eigenvalue test. Throws on non-symmetric input.
struct PsdCheck {
  bool psd = false;
  double min_eigenvalue = 0.0;
};
PsdCheck psd_check(const Eigen::MatrixXd& A, double tol = 1e-9);

// Count of singular values >= tol_rel * sigma_max; 0 for the zero matrix.
int numeric_rank(const Eigen::MatrixXd& A, double tol_rel = 1e-6);

// Dense evaluation F_j(x) of one LMI block.
Eigen::MatrixXd lmi_eval(const LmiBlock& block, const Eigen::VectorXd& x);

// Plain-text sparse-triplet dump of a program, for debugging and the CLI's
// dump-sdp verb. Line formats:
//   polycert-sdp 1 / sense / vars / offset / equalities / blocks  (header)
//   obj <var> <value>
//   rhs <row> <value>          A <row> <var> <value>
//   dim <block> <d>            F0 <block> <i> <j> <value>
//   F <block> <var> <i> <j> <value>
std::string dump_program(const ConeProgram& prog);

}  // namespace polycert
