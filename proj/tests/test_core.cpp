#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "numax/core.hpp"
#include "numax/problems.hpp"
#include "oracles.hpp"

using namespace numax;

namespace {

ConstrainedProblem square_unconstrained() {
  ConstrainedProblem p;
  p.name = "square";
  p.dim_primal = 1;
  p.eval_objective = [](const Vector& x) { return x[0] * x[0]; };
  p.eval_objective_grad = [](const Vector& x) { return Vector::Constant(1, 2.0 * x[0]); };
  return p;
}

// f = 0, g(x) = x - 1.
ConstrainedProblem linear_ineq() {
  ConstrainedProblem p;
  p.dim_primal = 1;
  p.num_ineq = 1;
  p.eval_objective = [](const Vector&) { return 0.0; };
  p.eval_objective_grad = [](const Vector&) { return Vector::Zero(1).eval(); };
  p.eval_ineq = [](const Vector& x) { return Vector::Constant(1, x[0] - 1.0); };
  p.eval_eq = [](const Vector&) { return Vector(0); };
  p.eval_constraint_jacobian = [](const Vector&) { return Matrix::Ones(1, 1).eval(); };
  return p;
}

// Quadratic objective with two inequality and one equality linear constraint.
ConstrainedProblem random_quadratic(std::mt19937_64& rng) {
  const Matrix Hr = Matrix::Random(3, 3);
  const Matrix H = Hr * Hr.transpose();
  const Vector c = oracle::random_vector(rng, 3, -1, 1);
  const Matrix G = Matrix::Random(2, 3);
  const Matrix E = Matrix::Random(1, 3);
  ConstrainedProblem p;
  p.dim_primal = 3;
  p.num_ineq = 2;
  p.num_eq = 1;
  p.eval_objective = [H, c](const Vector& x) { return 0.5 * x.dot(H * x) + c.dot(x); };
  p.eval_objective_grad = [H, c](const Vector& x) -> Vector { return H * x + c; };
  p.eval_ineq = [G](const Vector& x) -> Vector { return G * x - Vector::Ones(2); };
  p.eval_eq = [E](const Vector& x) -> Vector { return E * x - Vector::Constant(1, 0.5); };
  p.eval_constraint_jacobian = [G, E](const Vector&) {
    Matrix J(3, 3);
    J << G.transpose(), E.transpose();
    return J;
  };
  return p;
}

SvmDataset iris_train() {
  const SvmDataset all = load_dataset_csv(NUMAX_DATA_DIR "/iris_setosa_versicolor.csv");
  return split_dataset(all, 0).train;
}

}  // namespace

TEST(Lagrangian, UnconstrainedReducesToObjective) {
  const auto p = square_unconstrained();
  EXPECT_EQ(evaluate_lagrangian(p, Vector::Constant(1, 2.0), DualVector::zeros(0, 0)), 4.0);
}

TEST(Lagrangian, LinearTermOnly) {
  const auto p = linear_ineq();
  const DualVector d(Vector::Constant(1, 3.0), Vector(0));
  EXPECT_EQ(evaluate_lagrangian(p, Vector::Constant(1, 2.0), d), 3.0);
}

TEST(Lagrangian, SvmAtOriginSumsOnePerConstraint) {
  const SvmDataset train = iris_train();
  ASSERT_EQ(train.size(), 70);
  const auto p = build_svm_problem(train);
  const DualVector d(Vector::Ones(70), Vector(0));
  EXPECT_DOUBLE_EQ(evaluate_lagrangian(p, Vector::Zero(5), d), 70.0);
}

TEST(Lagrangian, DimensionMismatchIsConfigError) {
  const auto p = linear_ineq();
  EXPECT_THROW(evaluate_lagrangian(p, Vector::Zero(2), DualVector::zeros(1, 0)), ConfigError);
  EXPECT_THROW(evaluate_lagrangian(p, Vector::Zero(1), DualVector::zeros(2, 0)), ConfigError);
  EXPECT_THROW(lagrangian_primal_gradient(p, Vector::Zero(1), DualVector::zeros(0, 1)),
               ConfigError);
}

TEST(Lagrangian, AffineInMultipliers) {
  std::mt19937_64 rng(7);
  const auto p = random_quadratic(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = oracle::random_vector(rng, 3, -2, 2);
    const DualVector d1(oracle::random_vector(rng, 2, 0, 5), oracle::random_vector(rng, 1, -5, 5));
    const DualVector d2(oracle::random_vector(rng, 2, 0, 5), oracle::random_vector(rng, 1, -5, 5));
    const double a = u(rng);
    const DualVector mix(a * d1.lambda + (1 - a) * d2.lambda, a * d1.mu + (1 - a) * d2.mu);
    const double lhs = evaluate_lagrangian(p, x, mix);
    const double rhs = a * evaluate_lagrangian(p, x, d1) + (1 - a) * evaluate_lagrangian(p, x, d2);
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(PrimalGradient, UnconstrainedIsObjectiveGradient) {
  const auto p = square_unconstrained();
  EXPECT_EQ(lagrangian_primal_gradient(p, Vector::Constant(1, 1.5), DualVector::zeros(0, 0))[0],
            3.0);
}

TEST(PrimalGradient, LinearEqualityGivesMuTimesA) {
  const Vector a = (Vector(3) << 1.0, -2.0, 0.5).finished();
  ConstrainedProblem p;
  p.dim_primal = 3;
  p.num_eq = 1;
  p.eval_objective = [](const Vector&) { return 0.0; };
  p.eval_objective_grad = [](const Vector&) { return Vector::Zero(3).eval(); };
  p.eval_ineq = [](const Vector&) { return Vector(0); };
  p.eval_eq = [a](const Vector& x) { return Vector::Constant(1, a.dot(x) - 1.0); };
  p.eval_constraint_jacobian = [a](const Vector&) { return Matrix(a); };
  const Vector g = lagrangian_primal_gradient(p, Vector::Zero(3), DualVector(Vector(0), Vector::Constant(1, 2.5)));
  EXPECT_TRUE(g.isApprox(2.5 * a));
}

TEST(PrimalGradient, MatchesFiniteDifferencesOfLagrangian) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_quadratic(rng);
    const Vector x = oracle::random_vector(rng, 3, -2, 2);
    const DualVector d(oracle::random_vector(rng, 2, 0, 3), oracle::random_vector(rng, 1, -3, 3));
    const Vector g = lagrangian_primal_gradient(p, x, d);
    Vector fd(3);
    for (int i = 0; i < 3; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
      Vector xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (evaluate_lagrangian(p, xp, d) - evaluate_lagrangian(p, xm, d)) / (2 * h);
    }
    EXPECT_LE((g - fd).cwiseAbs().maxCoeff() / std::max(1.0, fd.cwiseAbs().maxCoeff()), 1e-5);
  }
}

TEST(Projection, ClampsLambdaOnly) {
  const DualVector d((Vector(2) << -1.0, 2.0).finished(), Vector::Constant(1, -5.0));
  const DualVector p = project_duals(d);
  EXPECT_EQ(p.lambda[0], 0.0);
  EXPECT_EQ(p.lambda[1], 2.0);
  EXPECT_EQ(p.mu[0], -5.0);
}

TEST(Projection, ZeroIsFixedPoint) {
  const DualVector d(Vector::Zero(2), Vector(0));
  EXPECT_EQ(project_duals(d).lambda, d.lambda);
}

TEST(Projection, NegativeZeroNormalized) {
  const DualVector p = project_duals(DualVector(Vector::Constant(1, -0.0), Vector(0)));
  EXPECT_FALSE(std::signbit(p.lambda[0]));
}

TEST(Projection, IdempotentBitExact) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const DualVector d(oracle::random_vector(rng, 5, -3, 3), oracle::random_vector(rng, 2, -3, 3));
    const DualVector once = project_duals(d);
    const DualVector twice = project_duals(once);
    EXPECT_EQ(std::memcmp(once.lambda.data(), twice.lambda.data(), 5 * sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(once.mu.data(), twice.mu.data(), 2 * sizeof(double)), 0);
  }
}

TEST(DualVectorTest, StackingRoundTrip) {
  const DualVector d((Vector(2) << 1, 2).finished(), (Vector(1) << 3).finished());
  const Vector s = d.stacked();
  EXPECT_EQ(s, (Vector(3) << 1, 2, 3).finished());
  const DualVector back = DualVector::from_stacked(s, 2);
  EXPECT_EQ(back.lambda, d.lambda);
  EXPECT_EQ(back.mu, d.mu);
  EXPECT_THROW(DualVector::from_stacked(s, 4), ConfigError);
}

TEST(GradientValidation, SvmPasses) {
  const auto p = build_svm_problem(iris_train());
  const GradientReport r = validate_gradients(p, 10, 0);
  EXPECT_EQ(r.points_checked, 10);
  EXPECT_TRUE(r.passed()) << r.max_rel_error();
}

TEST(GradientValidation, Benchmark2dPasses) {
  const GradientReport r = validate_gradients(build_2d_benchmark(), 10, 0);
  EXPECT_TRUE(r.passed()) << r.max_rel_error();
}

TEST(GradientValidation, WrongGradientFails) {
  ConstrainedProblem p = build_2d_benchmark();
  const auto good = p.eval_objective_grad;
  p.eval_objective_grad = [good](const Vector& x) -> Vector {
    return good(x) + Vector::Ones(2);
  };
  const GradientReport r = validate_gradients(p, 10, 0);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.max_objective_rel_error, 1e-3);
}

TEST(GradientValidation, NonFiniteValueRecordedAsFailure) {
  ConstrainedProblem p = square_unconstrained();
  p.eval_objective = [](const Vector& x) { return x[0] > 0 ? std::log(-1.0) : x[0] * x[0]; };
  const GradientReport r = validate_gradients(p, 20, 1);
  EXPECT_FALSE(r.passed());
  ASSERT_FALSE(r.failures.empty());
  EXPECT_GT(r.failures.front().point[0], 0.0);
}

TEST(GradientValidation, AllBuiltInProblemsPass) {
  std::mt19937_64 rng(5);
  const QPSystem sys = oracle::random_qp(rng, 4, 2, 0.0, 1.0);
  for (const auto& p : {build_svm_problem(iris_train()), build_2d_benchmark(), build_qp_problem(sys)}) {
    EXPECT_TRUE(validate_gradients(p, 20, 42).passed()) << p.name;
  }
}
