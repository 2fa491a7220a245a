#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "doctest.h"
#include "polycert/conic.hpp"
#include "support/oracles.hpp"

using namespace polycert;
using testsup::Rng;

namespace {

// Adjoint of the LMI map: (F^* Z)_v = <F_v, Z_v's block>, with the factor 2
// on off-diagonal entries that symmetric storage implies.
Eigen::VectorXd adjoint_apply(const ConeProgram& prog, const std::vector<Eigen::MatrixXd>& Zs) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(prog.num_vars);
  for (std::size_t b = 0; b < prog.psd_blocks.size(); ++b)
    for (const auto& e : prog.psd_blocks[b].entries)
      r[e.var] += (e.i == e.j ? 1.0 : 2.0) * e.value * Zs[b](e.i, e.j);
  return r;
}

Eigen::MatrixXd assemble_sym(const std::vector<std::vector<int>>& grid, const Eigen::VectorXd& x) {
  int d = static_cast<int>(grid.size());
  Eigen::MatrixXd Q(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) Q(i, j) = x[grid[i][j]];
  return Q;
}

void check_optimal_residuals(const Solution& sol) {
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.residuals.primal_inf <= 5e-7);
  CHECK(sol.residuals.gap <= 1e-5);
  CHECK(sol.residuals.compl_slack <= 1e-6);
}

}  // namespace

TEST_CASE("minimize t over the nonnegative ray [[t]] >= 0") {
  ConeProgram prog;
  int t = prog.add_var(1.0);
  prog.psd_blocks.push_back(LmiBlock{1, {}, {{t, 0, 0, 1.0}}});
  auto sol = solve(prog);
  check_optimal_residuals(sol);
  CHECK(std::abs(sol.objective) <= 1e-7);
  CHECK(std::abs(sol.x[t]) <= 1e-6);
}

TEST_CASE("smallest eigenvalue via max t s.t. A - tI >= 0") {
  Rng rng(7);
  for (int dim : {4, 6, 8, 10}) {
    Eigen::MatrixXd A(dim, dim);
    for (int j = 0; j < dim; ++j)
      for (int i = 0; i <= j; ++i) {
        A(i, j) = rng.uniform(-2.0, 2.0);
        A(j, i) = A(i, j);
      }
    double lam_min = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A)
                         .eigenvalues()
                         .minCoeff();  // oracle first

    ConeProgram prog;
    prog.sense = Sense::Max;
    int t = prog.add_var(1.0);
    LmiBlock blk;
    blk.dim = dim;
    for (int j = 0; j < dim; ++j)
      for (int i = 0; i <= j; ++i)
        if (A(i, j) != 0.0) blk.f0.push_back({{i, j}, A(i, j)});
    for (int i = 0; i < dim; ++i) blk.entries.push_back({t, i, i, -1.0});
    prog.psd_blocks.push_back(blk);

    auto sol = solve(prog);
    check_optimal_residuals(sol);
    CHECK(std::abs(sol.objective - lam_min) <= 1e-6 * (1.0 + std::abs(lam_min)));
  }
}

TEST_CASE("largest singular value via the symmetric dilation") {
  Rng rng(9);
  Eigen::MatrixXd B(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) B(i, j) = rng.uniform(-1.5, 1.5);
  double sigma = B.jacobiSvd().singularValues().maxCoeff();  // oracle first

  ConeProgram prog;
  int t = prog.add_var(1.0);
  LmiBlock blk;
  blk.dim = 7;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      if (B(i, j) != 0.0) blk.f0.push_back({{i, 3 + j}, B(i, j)});
  for (int i = 0; i < 7; ++i) blk.entries.push_back({t, i, i, 1.0});
  prog.psd_blocks.push_back(blk);

  auto sol = solve(prog);
  check_optimal_residuals(sol);
  CHECK(std::abs(sol.objective - sigma) <= 1e-6 * (1.0 + sigma));
}

TEST_CASE("Gram feasibility: x1^2 + x2^2 on basis (x1, x2) forces Q = I") {
  ConeProgram prog;
  auto q = add_psd_matrix_variable(prog, 2);
  prog.equalities.push_back({{{q[0][0], 1.0}}, 1.0});
  prog.equalities.push_back({{{q[0][1], 2.0}}, 0.0});
  prog.equalities.push_back({{{q[1][1], 1.0}}, 1.0});
  auto sol = solve(prog);
  check_optimal_residuals(sol);
  Eigen::MatrixXd Q = assemble_sym(q, sol.x);
  CHECK((Q - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("Gram infeasibility: x^4 - x^2 has no SOS decomposition") {
  // Basis (1, x, x^2): coefficient matching gives q00 = 0, 2 q01 = 0,
  // 2 q02 + q11 = -1, 2 q12 = 0, q22 = 1, which contradicts Q >= 0.
  ConeProgram prog;
  auto q = add_psd_matrix_variable(prog, 3);
  prog.equalities.push_back({{{q[0][0], 1.0}}, 0.0});
  prog.equalities.push_back({{{q[0][1], 2.0}}, 0.0});
  prog.equalities.push_back({{{q[0][2], 2.0}, {q[1][1], 1.0}}, -1.0});
  prog.equalities.push_back({{{q[1][2], 2.0}}, 0.0});
  prog.equalities.push_back({{{q[2][2], 1.0}}, 1.0});
  auto sol = solve(prog);
  REQUIRE(sol.status == SolveStatus::Infeasible);

  // Validate the Farkas certificate (y, Z): A^T y + F^*(Z) = 0, Z >= 0,
  // and b^T y - <F0, Z> > 0.
  REQUIRE(sol.psd_duals.size() == 1);
  double scale = sol.eq_duals.cwiseAbs().maxCoeff() + sol.psd_duals[0].cwiseAbs().maxCoeff();
  REQUIRE(scale > 0.0);
  Eigen::VectorXd station = adjoint_apply(prog, sol.psd_duals);
  for (std::size_t r = 0; r < prog.equalities.size(); ++r)
    for (const auto& [v, c] : prog.equalities[r].coeffs) station[v] += c * sol.eq_duals[r];
  CHECK(station.cwiseAbs().maxCoeff() <= 1e-6 * scale);
  auto pc = psd_check(sol.psd_duals[0], 1e-6 * scale);
  CHECK(pc.psd);
  double gain = 0.0;
  for (std::size_t r = 0; r < prog.equalities.size(); ++r)
    gain += prog.equalities[r].rhs * sol.eq_duals[r];
  CHECK(gain > 1e-9 * scale);
}

TEST_CASE("minimize -t over [[t]] >= 0 is unbounded with a valid ray") {
  ConeProgram prog;
  int t = prog.add_var(-1.0);
  prog.psd_blocks.push_back(LmiBlock{1, {}, {{t, 0, 0, 1.0}}});
  auto sol = solve(prog);
  REQUIRE(sol.status == SolveStatus::Unbounded);
  CHECK(sol.x[t] > 0.0);  // ray decreases -t and stays in the cone
}

TEST_CASE("trace minimization with a fixed off-diagonal entry") {
  // min q00 + q11 s.t. q01 = 1, Q >= 0. By AM-GM the optimum is 2.
  ConeProgram prog;
  auto q = add_psd_matrix_variable(prog, 2);
  prog.objective[q[0][0]] = 1.0;
  prog.objective[q[1][1]] = 1.0;
  prog.equalities.push_back({{{q[0][1], 1.0}}, 1.0});
  auto sol = solve(prog);
  check_optimal_residuals(sol);
  CHECK(std::abs(sol.objective - 2.0) <= 1e-6);
  CHECK(psd_check(assemble_sym(q, sol.x), 1e-6).psd);
}

TEST_CASE("maximize the middle Gram entry of x^4 + 1") {
  // Gram constraints on basis (1, x, x^2): q00 = 1, 2 q01 = 0,
  // q11 + 2 q02 = 0, 2 q12 = 0, q22 = 1. Writing q02 = s, PSD needs
  // s in [-1, 0], so max q11 = max(-2s) = 2.
  ConeProgram prog;
  prog.sense = Sense::Max;
  auto q = add_psd_matrix_variable(prog, 3);
  prog.objective[q[1][1]] = 1.0;
  prog.equalities.push_back({{{q[0][0], 1.0}}, 1.0});
  prog.equalities.push_back({{{q[0][1], 2.0}}, 0.0});
  prog.equalities.push_back({{{q[1][1], 1.0}, {q[0][2], 2.0}}, 0.0});
  prog.equalities.push_back({{{q[1][2], 2.0}}, 0.0});
  prog.equalities.push_back({{{q[2][2], 1.0}}, 1.0});
  auto sol = solve(prog);
  check_optimal_residuals(sol);
  CHECK(std::abs(sol.objective - 2.0) <= 1e-5);
}

TEST_CASE("degenerate equalities with a mirrored free variable") {
  // min t s.t. [[t]] >= 0, t - u = 0, 2t - 2u = 0 (duplicated row).
  ConeProgram prog;
  int t = prog.add_var(1.0);
  int u = prog.add_var(0.0);
  prog.psd_blocks.push_back(LmiBlock{1, {}, {{t, 0, 0, 1.0}}});
  prog.equalities.push_back({{{t, 1.0}, {u, -1.0}}, 0.0});
  prog.equalities.push_back({{{t, 2.0}, {u, -2.0}}, 0.0});
  auto sol = solve(prog);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(std::abs(sol.objective) <= 1e-6);
  CHECK(std::abs(sol.x[t] - sol.x[u]) <= 1e-6);
}

TEST_CASE("linear-only programs (no PSD blocks)") {
  SUBCASE("consistent equalities") {
    ConeProgram prog;
    int x1 = prog.add_var(0.0);
    int x2 = prog.add_var(0.0);
    prog.equalities.push_back({{{x1, 1.0}, {x2, 1.0}}, 2.0});
    prog.equalities.push_back({{{x1, 1.0}, {x2, -1.0}}, 0.0});
    auto sol = solve(prog);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(std::abs(sol.x[x1] - 1.0) <= 1e-8);
    CHECK(std::abs(sol.x[x2] - 1.0) <= 1e-8);
  }
  SUBCASE("inconsistent equalities") {
    ConeProgram prog;
    int x1 = prog.add_var(0.0);
    prog.equalities.push_back({{{x1, 1.0}}, 1.0});
    prog.equalities.push_back({{{x1, 1.0}}, 2.0});
    auto sol = solve(prog);
    CHECK(sol.status == SolveStatus::Infeasible);
  }
  SUBCASE("objective with a recession direction") {
    ConeProgram prog;
    int x1 = prog.add_var(1.0);
    int x2 = prog.add_var(0.0);
    prog.equalities.push_back({{{x1, 1.0}, {x2, 1.0}}, 2.0});
    auto sol = solve(prog);
    REQUIRE(sol.status == SolveStatus::Unbounded);
    CHECK(sol.x[x1] < 0.0);
    CHECK(std::abs(sol.x[x1] + sol.x[x2]) <= 1e-6 * sol.x.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("psd_check examples") {
  CHECK(psd_check(Eigen::MatrixXd::Identity(3, 3)).psd);
  CHECK(psd_check(Eigen::MatrixXd::Identity(3, 3)).min_eigenvalue == doctest::Approx(1.0));

  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(2, 2);
  D(0, 0) = 1.0;
  D(1, 1) = -1.0;
  auto pc = psd_check(D);
  CHECK(!pc.psd);
  CHECK(pc.min_eigenvalue == doctest::Approx(-1.0));

  // 4x4 matrix whose {1,4} principal minor is 4*28 - 14^2 = -84 < 0.  Its
  // smallest eigenvalue is 16 - sqrt(340) (eigenvalues of [[4,-14],[-14,28]]
  // are 16 +- sqrt(144 + 196); the {2,3} block has eigenvalues 2 and 22).
  Eigen::MatrixXd B(4, 4);
  B << 4, 0, 0, -14, 0, 12, 10, 0, 0, 10, 12, 0, -14, 0, 0, 28;
  double oracle_min = 16.0 - std::sqrt(340.0);  // oracle first
  auto pb = psd_check(B);
  CHECK(!pb.psd);
  CHECK(pb.min_eigenvalue == doctest::Approx(oracle_min));

  Eigen::MatrixXd NS(2, 2);
  NS << 0, 1, 0, 0;
  CHECK_THROWS_AS(psd_check(NS), std::invalid_argument);
}

TEST_CASE("numeric_rank examples") {
  CHECK(numeric_rank(Eigen::MatrixXd::Identity(5, 5)) == 5);
  CHECK(numeric_rank(Eigen::MatrixXd::Zero(4, 4)) == 0);

  Eigen::VectorXd b(4);
  b << 1, -2, 0.5, 3;
  CHECK(numeric_rank(b * b.transpose()) == 1);

  // Moment matrix of a 4-atom measure in 2 variables, degree-2 basis
  // (1, x1, x2, x1^2, x1 x2, x2^2): rank is at most 4 by construction, and
  // exactly 4 because the atom evaluation vectors are independent.
  Eigen::MatrixXd V(6, 4);
  double atoms[4][2] = {{1, 2}, {1, -2}, {-1, 2}, {-1, -2}};
  for (int a = 0; a < 4; ++a) {
    double x1 = atoms[a][0], x2 = atoms[a][1];
    V.col(a) << 1, x1, x2, x1 * x1, x1 * x2, x2 * x2;
  }
  REQUIRE(Eigen::FullPivLU<Eigen::MatrixXd>(V).rank() == 4);  // oracle first
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(6, 6);
  for (int a = 0; a < 4; ++a) M += 0.25 * V.col(a) * V.col(a).transpose();
  CHECK(numeric_rank(M) == 4);
}

TEST_CASE("numeric_rank is invariant under orthogonal conjugation") {
  Rng rng(17);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(6, 6);
  Eigen::VectorXd v1(6), v2(6), v3(6);
  for (int i = 0; i < 6; ++i) {
    v1[i] = rng.uniform(-1, 1);
    v2[i] = rng.uniform(-1, 1);
    v3[i] = rng.uniform(-1, 1);
  }
  A = v1 * v1.transpose() + v2 * v2.transpose() + v3 * v3.transpose();
  int r = numeric_rank(A);
  CHECK(r == 3);

  Eigen::MatrixXd G(6, 6);
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 6; ++i) G(i, j) = rng.uniform(-1, 1);
  Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ();
  CHECK(numeric_rank(Q * A * Q.transpose()) == r);
}

TEST_CASE("dump_program emits the documented triplet format") {
  ConeProgram prog;
  int t = prog.add_var(1.0);
  prog.obj_offset = 0.5;
  prog.equalities.push_back({{{t, 2.0}}, 3.0});
  prog.psd_blocks.push_back(LmiBlock{2, {{{0, 1}, -1.0}}, {{t, 0, 0, 1.0}}});
  std::string text = dump_program(prog);
  CHECK(text.find("polycert-sdp 1") == 0);
  CHECK(text.find("min") != std::string::npos);
  CHECK(text.find("obj 0 1") != std::string::npos);
  CHECK(text.find("rhs 0 3") != std::string::npos);
  CHECK(text.find("A 0 0 2") != std::string::npos);
  CHECK(text.find("dim 0 2") != std::string::npos);
  CHECK(text.find("F0 0 0 1 -1") != std::string::npos);
  CHECK(text.find("F 0 0 0 0 1") != std::string::npos);
}

TEST_CASE("lmi_eval assembles the symmetric matrix") {
  LmiBlock blk{2, {{{0, 0}, 1.0}, {{0, 1}, 2.0}}, {{0, 1, 1, 3.0}, {1, 0, 1, 1.0}}};
  Eigen::VectorXd x(2);
  x << 2.0, -1.0;
  Eigen::MatrixXd F = lmi_eval(blk, x);
  CHECK(F(0, 0) == doctest::Approx(1.0));
  CHECK(F(0, 1) == doctest::Approx(2.0 - 1.0));
  CHECK(F(1, 0) == doctest::Approx(1.0));
  CHECK(F(1, 1) == doctest::Approx(6.0));
}
