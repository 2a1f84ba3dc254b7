#include "sdecal/experiment.hpp"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "sdecal/builtin_models.hpp"

using namespace sdecal;

namespace {

namespace fs = std::filesystem;

ExperimentPlan ou1d_plan() {
  const BuiltinModel ou = make_ou1d(1.0, 2.0);
  ExperimentPlan plan;
  plan.label = ou.name;
  plan.model = ou.model;
  plan.theta0 = ou.theta0;
  plan.x0 = ou.x0;
  plan.epsilon_grid = {0.1, 0.025};
  plan.gap_exponent = 1.5;
  plan.replications = 60;
  plan.estimator = EstimatorKind::DriftLinear;
  plan.seed_base = 4242;
  return plan;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("sdecal_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Plan, RegimeValidation) {
  ExperimentPlan plan = ou1d_plan();
  plan.gap_exponent = 1.0;  // not a CLT regime
  EXPECT_THROW(run_clt(plan), ConfigError);
  plan.allow_regime_violation = true;
  EXPECT_NO_THROW(plan.validate(ExperimentKind::Clt));

  ExperimentPlan bad = ou1d_plan();
  bad.epsilon_grid = {0.025, 0.1};  // increasing
  EXPECT_THROW(bad.validate(ExperimentKind::Consistency), ConfigError);
}

TEST(Streaming, MatchesRecordBasedEstimatorsBitwise) {
  // The streaming fast path must reproduce the record-based pipeline exactly:
  // same normals, same accumulation arithmetic, same finalization.
  for (int model_case = 0; model_case < 2; ++model_case) {
    const BuiltinModel built =
        (model_case == 0) ? make_ou1d(1.0, 2.0)
                          : make_ou_nd((VectorXd(2) << 0.5, -0.3).finished(),
                                       (MatrixXd(2, 2) << 1.0, 0.3, -0.2, 1.2).finished(),
                                       (MatrixXd(2, 2) << 0.8, 0.2, 0.2, 0.6).finished());
    ExperimentPlan plan;
    plan.label = built.name;
    plan.model = built.model;
    plan.theta0 = built.theta0;
    plan.x0 = built.x0;
    plan.epsilon_grid = {0.1};
    plan.gap_exponent = 1.5;
    plan.replications = 5;
    plan.estimator = EstimatorKind::DriftLinear;
    plan.seed_base = 99;
    const ExperimentReport streamed = run_consistency(plan);

    const ScalingRegime regime = ScalingRegime::from_gap_exponent(0.1, 1.5);
    const auto [g, h] = built.model.ou->from_mu(built.theta0.mu);
    for (int rep = 0; rep < plan.replications; ++rep) {
      SimConfig cfg;
      cfg.x0 = built.x0;
      cfg.regime = regime;
      cfg.seed = plan.seed_base;
      cfg.stream = make_stream(0, static_cast<std::uint32_t>(rep));
      const DiscreteRecord record = exact_ou(g, h, built.theta0.vartheta, cfg);
      const MatrixXd vt_plug = estimate_diffusion(record, built.model).theta_sym;
      const DriftFit fit = amle_kron(record, built.model, vt_plug);
      const VectorXd streamed_est = streamed.outcomes[0][static_cast<std::size_t>(rep)].estimate;
      EXPECT_EQ((fit.mu_hat - streamed_est).norm(), 0.0)
          << "model " << built.name << " rep " << rep;
    }

    // Same equality for the diffusion estimator kind.
    ExperimentPlan dplan = plan;
    dplan.estimator = (built.model.diffusion_form == DiffusionForm::Form1)
                          ? EstimatorKind::DiffForm1
                          : EstimatorKind::DiffForm2;
    const ExperimentReport dstreamed = run_consistency(dplan);
    for (int rep = 0; rep < dplan.replications; ++rep) {
      SimConfig cfg;
      cfg.x0 = built.x0;
      cfg.regime = ScalingRegime::from_gap_exponent(0.1, 1.5);
      cfg.seed = dplan.seed_base;
      cfg.stream = make_stream(0, static_cast<std::uint32_t>(rep));
      const DiscreteRecord record = exact_ou(g, h, built.theta0.vartheta, cfg);
      const VectorXd rec_est = vec(estimate_diffusion(record, built.model).theta_sym);
      const VectorXd str_est = dstreamed.outcomes[0][static_cast<std::size_t>(rep)].estimate;
      EXPECT_EQ((rec_est - str_est).norm(), 0.0)
          << "diffusion, model " << built.name << " rep " << rep;
    }
  }
}

TEST(Determinism, BitIdenticalReportsAcrossThreadCounts) {
  ExperimentPlan plan = ou1d_plan();
  plan.epsilon_grid = {0.1};
  plan.replications = 24;

  const fs::path d1 = fresh_dir("det1");
  const fs::path d2 = fresh_dir("det2");
  const fs::path d3 = fresh_dir("det3");
  plan.threads = 1;
  run_consistency(plan).write(d1.string());
  run_consistency(plan).write(d2.string());
  plan.threads = 4;
  run_consistency(plan).write(d3.string());

  for (const char* f : {"report.json", "summary.csv", "raw_estimates.csv"}) {
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    EXPECT_EQ(slurp(d1 / f), slurp(d3 / f)) << f << " (threads=4)";
  }
}

TEST(Consistency, RmseDecaysOnScalarOu) {
  const ExperimentReport report = run_consistency(ou1d_plan());
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_TRUE(report.valid);
  EXPECT_EQ(report.rows[0].n_failed, 0);
  EXPECT_TRUE(report.decay_ok);
  EXPECT_GT(report.rows[0].rmse, report.rows[1].rmse);
}

TEST(Consistency, SplitHalvesAgree) {
  ExperimentPlan plan = ou1d_plan();
  plan.epsilon_grid = {0.05};
  plan.replications = 200;
  const ExperimentReport report = run_consistency(plan);
  const auto& outs = report.outcomes[0];
  double m1 = 0, m2 = 0, v1 = 0, v2 = 0;
  const int half = 100;
  for (int i = 0; i < half; ++i) m1 += outs[i].estimate[0];
  for (int i = half; i < 200; ++i) m2 += outs[i].estimate[0];
  m1 /= half;
  m2 /= half;
  for (int i = 0; i < half; ++i) v1 += std::pow(outs[i].estimate[0] - m1, 2);
  for (int i = half; i < 200; ++i) v2 += std::pow(outs[i].estimate[0] - m2, 2);
  v1 /= half - 1;
  v2 /= half - 1;
  const double se = std::sqrt(v1 / half + v2 / half);
  EXPECT_LT(std::abs(m1 - m2), 4.0 * se);
}

TEST(Clt, ScalarOuMatchesTheory) {
  ExperimentPlan plan = ou1d_plan();
  plan.epsilon_grid = {0.02};
  plan.replications = 400;
  const ExperimentReport report = run_clt(plan);
  ASSERT_EQ(report.rows.size(), 1u);
  // Sigma^{-1} = 2 mu0 = 2 for this model.
  EXPECT_NEAR(report.theory_cov(0, 0), 2.0, 0.05);
  EXPECT_LT(report.rows[0].cov_frob_rel_err, 0.25);
  EXPECT_GT(report.rows[0].ks_stat, 0.0);
  EXPECT_GT(report.rows[0].ks_crit_1pct, 0.0);
}

TEST(Clt, MultidimDiffusionUsesDistinctCoordinatesForKs) {
  // vec of a symmetric 2x2 estimate has a rank-3 covariance; the KS check
  // must run on the 3 distinct coordinates and stay finite.
  const BuiltinModel ou = make_ou_nd((VectorXd(2) << 0.5, -0.3).finished(),
                                     (MatrixXd(2, 2) << 1.0, 0.3, -0.2, 1.2).finished(),
                                     (MatrixXd(2, 2) << 0.8, 0.2, 0.2, 0.6).finished());
  ExperimentPlan plan;
  plan.label = ou.name;
  plan.model = ou.model;
  plan.theta0 = ou.theta0;
  plan.x0 = ou.x0;
  plan.epsilon_grid = {0.05};
  plan.gap_exponent = 1.5;
  plan.replications = 200;
  plan.estimator = EstimatorKind::DiffForm2;
  plan.seed_base = 777;
  const ExperimentReport report = run_clt(plan);
  const EpsilonRow& row = report.rows[0];
  EXPECT_EQ(row.ks_dof, 3);
  EXPECT_TRUE(std::isfinite(row.ks_stat));
  EXPECT_GT(row.ks_stat, 0.0);
  EXPECT_LT(row.ks_stat, 1.0);
  // The full-vec covariance comparison stays in the reported coordinates.
  EXPECT_EQ(row.emp_cov.rows(), 4);
  EXPECT_TRUE(std::isfinite(row.cov_frob_rel_err));
}

TEST(Clt, OracleAndPluginAgreeForConstantDiffusionKron) {
  // For Kron drift with constant diffusion the plugged-in vartheta cancels
  // algebraically from the normal equations, so the oracle ablation must give
  // the same estimates up to rounding.
  ExperimentPlan plan = ou1d_plan();
  plan.epsilon_grid = {0.05};
  plan.replications = 20;
  const ExperimentReport plug = run_consistency(plan);
  plan.oracle_vartheta = true;
  const ExperimentReport oracle = run_consistency(plan);
  for (int r = 0; r < plan.replications; ++r) {
    const double a = plug.outcomes[0][r].estimate[0];
    const double b = oracle.outcomes[0][r].estimate[0];
    EXPECT_NEAR(a, b, 1e-10 * std::max(1.0, std::abs(a)));
  }
}

TEST(Failures, RecordedAndExcludedWithoutAborting) {
  // Explosive Euler model: every replication blows up; the sweep completes,
  // failures are counted, and the report is marked invalid.
  ModelSpec m;
  m.dim_state = 1;
  m.dim_drift_param = 1;
  set_linear_drift(m, [](const VectorXd& x) {
    return MatrixXd(MatrixXd::Constant(1, 1, x[0] * x[0] * x[0]));
  });
  set_form1_diffusion(m, [](const VectorXd&) { return MatrixXd(MatrixXd::Identity(1, 1)); },
                      true);
  ExperimentPlan plan;
  plan.label = "explosive";
  plan.model = m;
  plan.theta0.mu = VectorXd::Ones(1);
  plan.theta0.vartheta = MatrixXd::Identity(1, 1);
  plan.x0 = VectorXd::Constant(1, 20.0);
  plan.epsilon_grid = {0.5};
  plan.gap_exponent = 0.5;
  plan.replications = 8;
  plan.use_exact_ou = false;
  plan.substeps = 1;
  plan.seed_base = 7;
  const ExperimentReport report = run_consistency(plan);
  EXPECT_EQ(report.rows[0].n_failed, 8);
  EXPECT_EQ(report.rows[0].n_ok, 0);
  EXPECT_FALSE(report.valid);
  EXPECT_EQ(report.outcomes[0][0].failure, "Blowup");
  const fs::path dir = fresh_dir("fail");
  EXPECT_NO_THROW(report.write(dir.string()));
}

TEST(Report, FilesAndShapes) {
  ExperimentPlan plan = ou1d_plan();
  plan.replications = 10;
  const ExperimentReport report = run_consistency(plan);
  EXPECT_EQ(report.config_hash.size(), 40u);
  const fs::path dir = fresh_dir("files");
  report.write(dir.string());
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "raw_estimates.csv"));
  EXPECT_TRUE(fs::exists(dir / "run_log.txt"));

  // summary.csv: header + one row per epsilon.
  std::ifstream is(dir / "summary.csv");
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  EXPECT_EQ(lines, 1 + static_cast<int>(plan.epsilon_grid.size()));

  // report.json parses and has no wall-time key (bit-identical reruns).
  const nlohmann::json j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_FALSE(j.contains("wall_seconds"));
  EXPECT_EQ(j["rows"].size(), plan.epsilon_grid.size());
}

TEST(Report, RawEstimatesOneRowPerReplication) {
  ExperimentPlan plan = ou1d_plan();
  plan.replications = 7;
  const ExperimentReport report = run_consistency(plan);
  const fs::path dir = fresh_dir("raw");
  report.write(dir.string());
  std::ifstream is(dir / "raw_estimates.csv");
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  EXPECT_EQ(lines, 1 + 2 * 7);  // header + |grid| * R
}
