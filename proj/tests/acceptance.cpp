// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "mixclip/cli.hpp"
#include "mixclip/train.hpp"
#include "oracle.hpp"
#include "test_helpers.hpp"

using namespace mixclip;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kHandTol = 1e-12;
constexpr double kHandBudgetSec = 1.0;
constexpr std::size_t kGradInstances = 200;
constexpr double kLossGradTol = 1e-5;
constexpr double kEncoderGradTol = 1e-4;
constexpr double kGradBudgetSec = 30.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kHotTau = 1e6;
constexpr double kHotTol = 1e-5;
constexpr std::size_t kDistInstances = 1000;
constexpr double kDistTol = 1e-12;
constexpr std::size_t kBetaDraws = 100000;
constexpr double kBetaMeanTol = 0.01;
constexpr double kBetaVarTol = 0.01;
constexpr double kBetaBudgetSec = 5.0;
constexpr double kCalibrationMinGap = 0.1;
constexpr double kProtocolBudgetSec = 60.0;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* title, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  const double secs = seconds_since(t0);
  std::printf("criterion %d %s  %s:%s (%.2fs)\n", id, v.pass ? "PASS" : "FAIL", title,
              v.detail.str().c_str(), secs);
  std::fflush(stdout);
  failures += v.pass ? 0 : 1;
}

struct Cli {
  int code;
  std::string out;
  std::string err;
};

Cli run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mixclip");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string dataset_bytes(const DomainDataset& ds) {
  std::ostringstream out;
  write_dataset(out, ds);
  return out.str();
}

void criterion_1(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto classes = testing::orthogonal_pair();
  const auto cfg = testing::hand_config(0.3);
  const Vec64 img{1.0, 0.0};
  const double paper = mms_paper_loss(img, 0, classes, cfg).value;
  const double actual = mms_actual_loss(img, 0, classes, cfg).value;
  const double paper_ref = oracle::paper_loss(img, 0, classes.rows(), 1.0, 0.3);
  const double actual_ref = oracle::actual_loss(img, 0, classes.rows(), 1.0, 0.3);
  const double dp = std::abs(paper - paper_ref);
  const double da = std::abs(actual - actual_ref);
  v.detail << " documented " << format_fixed(paper, 10) << " (|diff| " << dp << "), actual "
           << format_fixed(actual, 10) << " (|diff| " << da << ")";
  v.require(dp <= kHandTol, "documented loss vs direct evaluation");
  v.require(da <= kHandTol, "actual loss vs direct evaluation");
  v.require(std::abs(paper_ref - std::log1p(std::exp(-0.7))) <= kHandTol, "reference log(1+e^-0.7)");
  v.require(std::abs(actual_ref - std::log1p(std::exp(0.7))) <= kHandTol, "reference log(1+e^0.7)");
  v.require(seconds_since(t0) < kHandBudgetSec, "runtime");
}

void criterion_2(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  SeededRng rng(2024);
  const auto paper = gradcheck::check_mms(rng, kGradInstances, MmsForm::Paper);
  const auto actual = gradcheck::check_mms(rng, kGradInstances, MmsForm::Actual);
  const auto mix = gradcheck::check_mixup(rng, kGradInstances);
  const auto total = gradcheck::check_total(rng, kGradInstances);
  const auto enc = gradcheck::check_encoder(rng, kGradInstances);
  v.detail << " max rel err documented " << paper.max_rel << ", actual " << actual.max_rel << ", mixup "
           << mix.max_rel << " (" << mix.skipped << " near kinks skipped), total " << total.max_rel << " ("
           << total.skipped << " skipped), encoder " << enc.max_rel << " (" << enc.skipped << " skipped)";
  for (const auto* s : {&paper, &actual, &mix, &total}) {
    v.require(s->checked >= kGradInstances, "instance count");
    v.require(s->max_rel < kLossGradTol, "loss gradient tolerance");
  }
  v.require(enc.checked >= kGradInstances, "encoder instance count");
  v.require(enc.max_rel < kEncoderGradTol, "encoder gradient tolerance");
  v.require(seconds_since(t0) < kGradBudgetSec, "runtime");
}

void criterion_3(Verdict& v) {
  SeededRng rng(303);
  double ce_gap = 0.0, lambda_gap = 0.0, eta_mix = 0.0, hot_gap = 0.0;
  for (std::size_t t = 0; t < 300; ++t) {
    const std::size_t count = 2 + rng.uniform_index(7);
    const auto classes = testing::random_classes(rng, count, 2 + rng.uniform_index(15));
    const std::size_t dim = classes.dim();
    LossConfig cfg;
    cfg.tau = gradcheck::kTaus[t % 3];
    cfg.margin = 0.3;

    // margin 0: documented loss is plain cross-entropy on similarities / tau.
    {
      auto m0 = cfg;
      m0.margin = 0.0;
      m0.tau = 0.2 + rng.uniform_open();  // keeps the raw-exp oracle in range
      const Vec64 img = testing::random_unit(rng, dim);
      const std::size_t y = rng.uniform_index(count);
      Vec64 logits;
      for (const auto& row : classes.rows()) logits.push_back(oracle::inner(img, row) / m0.tau);
      ce_gap = std::max(ce_gap, std::abs(mms_paper_loss(img, y, classes, m0).value - oracle::cross_entropy(logits, y)));
    }

    const std::size_t batch = 1 + rng.uniform_index(8);
    const auto setup = gradcheck::random_batch(rng, batch, count);
    std::vector<Vec64> embs;
    for (std::size_t i = 0; i < batch; ++i) embs.push_back(testing::random_unit(rng, dim));
    double mean_actual = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      mean_actual += mms_actual_loss(embs[i], setup.labels[i], classes, cfg).value;
    }
    mean_actual /= static_cast<double>(batch);
    const double scale = std::max(1.0, mean_actual);

    auto no_mix = cfg;
    no_mix.lambda = 0.0;
    lambda_gap = std::max(
        lambda_gap, std::abs(total_loss(embs, setup.labels, setup.draws, classes, no_mix).value - mean_actual) / scale);

    auto ones = setup.draws;
    for (auto& d : ones) d.eta = 1.0;
    eta_mix = std::max(eta_mix, total_loss(embs, setup.labels, ones, classes, cfg).mix);

    auto hot = cfg;
    hot.tau = kHotTau;
    const double log_c = std::log(static_cast<double>(count));
    hot_gap = std::max(hot_gap, std::abs(mms_paper_loss(embs[0], setup.labels[0], classes, hot).value - log_c));
    hot_gap = std::max(hot_gap, std::abs(mms_actual_loss(embs[0], setup.labels[0], classes, hot).value - log_c));
  }
  v.detail << " margin-0 vs cross-entropy " << ce_gap << ", lambda-0 vs mean actual " << lambda_gap
           << ", mix term at eta=1 " << eta_mix << ", |L - log C| at tau=1e6 " << hot_gap;
  v.require(ce_gap <= kIdentityTol, "margin-0 reduction");
  v.require(lambda_gap <= kIdentityTol, "lambda-0 reduction");
  v.require(eta_mix == 0.0, "eta=1 mix term");
  v.require(hot_gap <= kHotTol, "temperature limit");
}

void criterion_4(Verdict& v) {
  SeededRng rng(404);
  double sum_gap = 0.0, perm_gap = 0.0, mix_lo = 2.0, mix_hi = 0.0;
  for (std::size_t t = 0; t < kDistInstances; ++t) {
    const std::size_t count = 2 + rng.uniform_index(7);
    const auto classes = testing::random_classes(rng, count, 2 + rng.uniform_index(15));
    LossConfig cfg;
    cfg.tau = gradcheck::kTaus[t % 3];
    cfg.margin = rng.uniform_open();
    const Vec64 img = testing::random_unit(rng, classes.dim());
    const Vec64 img2 = testing::random_unit(rng, classes.dim());
    const std::size_t y = rng.uniform_index(count);
    const std::size_t y2 = rng.uniform_index(count);
    const auto mixed = mix_embeddings(img, img2, classes[y], classes[y2], rng.uniform_open());

    const auto p = class_distribution(mixed.image, mixed.text, classes, cfg);
    sum_gap = std::max(sum_gap, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));

    const double m = mixup_loss(img, y, mixed.image, mixed.text, classes, cfg).value;
    mix_lo = std::min(mix_lo, m);
    mix_hi = std::max(mix_hi, m);

    const auto perm = rng.permutation(count);
    std::vector<Vec64> rows;
    std::vector<std::string> names;
    std::vector<std::size_t> where(count);
    for (std::size_t k = 0; k < count; ++k) {
      rows.push_back(classes[perm[k]]);
      names.push_back(classes.names()[perm[k]]);
      where[perm[k]] = k;
    }
    const ClassEmbeddings permuted(rows, names);
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); };
    perm_gap = std::max(perm_gap, rel(mms_paper_loss(img, y, classes, cfg).value,
                                      mms_paper_loss(img, where[y], permuted, cfg).value));
    perm_gap = std::max(perm_gap, rel(mms_actual_loss(img, y, classes, cfg).value,
                                      mms_actual_loss(img, where[y], permuted, cfg).value));
    perm_gap = std::max(perm_gap, rel(m, mixup_loss(img, where[y], mixed.image, mixed.text, permuted, cfg).value));
    const auto q = class_distribution(mixed.image, mixed.text, permuted, cfg);
    for (std::size_t k = 0; k < count; ++k) perm_gap = std::max(perm_gap, std::abs(q[k] - p[perm[k]]));
  }
  v.detail << " max |sum p - 1| " << sum_gap << ", mixup range [" << mix_lo << ", " << mix_hi
           << "], permutation gap " << perm_gap;
  v.require(sum_gap <= kDistTol, "distribution sums");
  v.require(mix_lo >= 0.0 && mix_hi <= 2.0, "mixup bounds");
  v.require(perm_gap <= kDistTol, "permutation equivariance");
}

void criterion_5(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  const BetaParams params{0.2, 0.2};
  SeededRng rng(505);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < kBetaDraws; ++i) {
    const double x = sample_beta(rng, params);
    sum += x;
    sum2 += x * x;
  }
  const double n = static_cast<double>(kBetaDraws);
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double ab = params.alpha + params.beta;
  const double expected_var = params.alpha * params.beta / (ab * ab * (ab + 1.0));
  v.detail << " mean " << format_fixed(mean, 5) << " (want 0.5), variance " << format_fixed(var, 5) << " (want "
           << format_fixed(expected_var, 5) << ")";
  v.require(std::abs(mean - 0.5) <= kBetaMeanTol, "mean");
  v.require(std::abs(var - expected_var) <= kBetaVarTol, "variance");
  v.require(seconds_since(t0) < kBetaBudgetSec, "runtime");
}

void criterion_6(Verdict& v) {
  const fs::path dir = fs::temp_directory_path() / "mixclip_acceptance_cmp";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string data = (dir / "generic.jsonl").string();
  v.require(run_cli({"gen-data", "--out", data}).code == 0, "gen-data");
  const auto cmp = run_cli({"compare-losses", "--data", data, "--format", "csv"});
  v.require(cmp.code == 0, "compare-losses exit status");
  // Last row is the aggregate: ...,max_abs_diff,grad_cos_mean,grad_cos_min
  std::istringstream lines(cmp.out);
  std::string line, last;
  while (std::getline(lines, line)) last = line;
  std::vector<std::string> cells;
  std::istringstream row(last);
  for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
  const double max_gap = cells.size() == 8 ? std::stod(cells[5]) : 0.0;
  v.require(cells.size() == 8 && cells[0] == "all", "aggregate row");
  v.require(max_gap > kCalibrationMinGap, "generic inputs differ");

  const std::string dup = (dir / "duplicate.jsonl").string();
  {
    std::ofstream f(dup);
    f << "{\"class_names\":[\"first\",\"second\"],\"domain_names\":[\"hand\"],\"encoded\":true,"
         "\"dim\":2,\"class_embeddings\":[[1,0],[1,0]]}\n"
         "{\"domain\":\"hand\",\"label\":\"first\",\"features\":[1,0]}\n";
  }
  RunConfig cfg;
  cfg.set("loss.tau", "1");
  const auto ds = load_dataset(dup);
  const auto exact = cli::compare_losses(ds, resolve_class_embeddings(ds, cfg.train.model), nullptr, cfg);
  const auto dup_cli = run_cli({"compare-losses", "--data", dup, "--set", "loss.tau=1"});
  v.require(dup_cli.code == 0, "duplicate-class compare-losses exit status");
  v.require(exact.overall.max_abs_diff == 0.0, "duplicate-class difference exactly 0");
  v.require(dup_cli.out.find("coincide") != std::string::npos, "duplicate-class verdict");
  v.detail << " generic max |L_doc - L_actual| " << max_gap << " (grad cosine mean "
           << (cells.size() == 8 ? cells[6] : "?") << "), duplicate-class max diff " << exact.overall.max_abs_diff;
  fs::remove_all(dir);
}

void criterion_7(Verdict& v) {
  const DomainDataset ds = generate(SynthConfig{});
  const TrainConfig cfg;  // defaults, pinned seeds
  const auto t0 = std::chrono::steady_clock::now();
  const auto first = run_protocol(ds, cfg);
  const double secs = seconds_since(t0);
  const auto second = run_protocol(ds, cfg);

  v.require(first.tasks.size() == 4, "4 tasks");
  v.require(secs < kProtocolBudgetSec, "runtime");
  v.detail << " accuracy trained/zero-shot per domain:";
  bool all_better = true;
  for (const auto& t : first.tasks) {
    v.detail << " " << format_fixed(t.accuracy, 2) << "/" << format_fixed(t.baseline_accuracy, 2);
    all_better = all_better && t.accuracy > t.baseline_accuracy;
  }
  v.require(all_better, "trained beats zero-shot on every domain");
  v.require(render_report_csv(first, cfg) == render_report_csv(second, cfg) &&
                render_report_text(first, cfg) == render_report_text(second, cfg),
            "byte-identical rerun");

  // Same harness with the documented margin loss driving the classification term.
  TrainConfig documented = cfg;
  documented.loss.form = MmsForm::Paper;
  const auto alt = run_protocol(ds, documented);
  v.detail << " (info: loss.mms_form=paper gives avg " << format_fixed(alt.average, 2) << " vs zero-shot "
           << format_fixed(alt.baseline_average, 2) << ")";
}

void criterion_8(Verdict& v) {
  SynthConfig data;
  const DomainDataset ds = generate(data);
  TrainConfig cfg;
  cfg.epochs = 3;
  const ClassEmbeddings classes = resolve_class_embeddings(ds, cfg.model);
  const EncoderParams init = init_encoder({ds.dim(), cfg.model.hidden_dim, classes.dim()}, cfg.model.seed);
  auto split = leave_one_domain_out(ds, 2);
  const auto before = train_run(split.source, split.target, init, classes, cfg);
  SeededRng rng(808);
  for (auto& s : split.target.samples) {
    for (double& x : s.features) x = 10.0 * rng.normal();
  }
  const auto after = train_run(split.source, split.target, init, classes, cfg);
  v.require(flatten(before.params) == flatten(after.params), "target isolation");

  const fs::path dir = fs::temp_directory_path() / "mixclip_acceptance_ck";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint(before.params, classes, cfg, dir / "ck.json");
  const auto loaded = load_checkpoint(dir / "ck.json");
  v.require(flatten(loaded.params) == flatten(before.params), "checkpoint parameters bit-exact");
  v.require(loaded.classes.rows() == classes.rows(), "checkpoint class table bit-exact");
  v.require(serialize_checkpoint(loaded.params, loaded.classes, loaded.config) ==
                serialize_checkpoint(before.params, classes, cfg),
            "checkpoint bytes stable");
  fs::remove_all(dir);

  const std::string a = dataset_bytes(generate(data));
  const std::string b = dataset_bytes(generate(data));
  data.seed = 2;
  const std::string c = dataset_bytes(generate(data));
  v.require(a == b, "generation byte-stable per seed");
  v.require(a != c, "seed changes samples");
  v.detail << " target mutation leaves " << init.parameter_count()
           << " parameters bit-identical; checkpoint and dataset bytes stable";
}

}  // namespace

int main() {
  report(1, "loss oracle equivalence", criterion_1);
  report(2, "gradient verification", criterion_2);
  report(3, "reduction identities", criterion_3);
  report(4, "distribution properties", criterion_4);
  report(5, "Beta sampler moments", criterion_5);
  report(6, "loss calibration study", criterion_6);
  report(7, "protocol smoke benchmark", criterion_7);
  report(8, "isolation and determinism", criterion_8);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
