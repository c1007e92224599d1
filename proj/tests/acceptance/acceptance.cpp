// Runs the eleven acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "app.hpp"
#include "fedproto/federation.hpp"
#include "fedproto/losses.hpp"
#include "oracles.hpp"

using namespace fedproto;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

/// Every entry uniform, biases included, so no row sits on the zero-norm kink.
ModelParams general_params(EncoderDims dims, std::mt19937_64& rng) {
  ModelParams p(dims);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : p.values()) v = u(rng);
  return p;
}

std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<int> y(n);
  for (int& v : y) v = pick(rng);
  return y;
}

// 1. MMD estimator against the triple-sum oracle.
Outcome mmd_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> rows(1, 8);
  std::uniform_int_distribution<std::size_t> dims(1, 4);
  std::uniform_real_distribution<double> sigma(0.2, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t d = dims(rng);
    const Matrix x = oracle::random_matrix(rows(rng), d, rng);
    const Matrix y = oracle::random_matrix(rows(rng), d, rng);
    const double s = sigma(rng);
    worst = std::max(worst, std::abs(mmd2(x, y, KernelSpec::linear()) - oracle::mmd2(x, y, KernelKind::Linear, 0, 0)));
    worst = std::max(worst, std::abs(mmd2(x, y, KernelSpec::poly2(1.0)) -
                                     oracle::mmd2(x, y, KernelKind::PolyDegree2, 0, 1.0)));
    worst = std::max(worst, std::abs(mmd2(x, y, KernelSpec::gaussian(s)) -
                                     oracle::mmd2(x, y, KernelKind::Gaussian, s, 0)));
    worst = std::max(worst, std::abs(mmd2(x, y, KernelSpec::gaussian_median()) -
                                     oracle::mmd2(x, y, KernelKind::Gaussian, oracle::median_sigma(x, y), 0)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 5.0, "max abs err " + fmt("%.2e", worst) + ", " + fmt("%.3f", secs) + " s"};
}

// 2. Analytic gradients against central differences.
Outcome gradient_suite() {
  std::mt19937_64 rng(202);
  double ce = 0.0;
  double soft_ce = 0.0;
  double tri = 0.0;
  double soft_tri = 0.0;
  double mmd = 0.0;
  const std::vector<int> paired{0, 0, 1, 1, 2, 2, 3, 3};
  for (int i = 0; i < 50; ++i) {
    const ClassifierHead head(oracle::random_matrix(3, 4, rng));
    const Matrix f = oracle::random_matrix(5, 3, rng);
    const auto y = random_labels(5, 4, rng);
    const HeadLoss h = ce_loss_grad(head, f, y);
    ce = std::max({ce,
                   oracle::max_rel_err(h.grad_features.values(),
                                       oracle::finite_diff([&](const Matrix& p) { return ce_loss_grad(head, p, y).loss; }, f)
                                           .values()),
                   oracle::max_rel_err(h.grad_head.values(),
                                       oracle::finite_diff([&](const Matrix& w) {
                                         return ce_loss_grad(ClassifierHead(w), f, y).loss;
                                       }, head.w).values())});

    const Matrix targets = softmax_rows(oracle::random_matrix(5, 4, rng));
    const HeadLoss s = ce_loss_grad_soft(head, f, targets);
    soft_ce = std::max(
        {soft_ce,
         oracle::max_rel_err(s.grad_features.values(),
                             oracle::finite_diff([&](const Matrix& p) { return ce_loss_grad_soft(head, p, targets).loss; },
                                                 f).values()),
         oracle::max_rel_err(s.grad_head.values(), oracle::finite_diff([&](const Matrix& w) {
                                                     return ce_loss_grad_soft(ClassifierHead(w), f, targets).loss;
                                                   }, head.w).values())});

    const Matrix g = oracle::random_matrix(8, 3, rng);
    tri = std::max(tri, oracle::max_rel_err(
                            triplet_loss_grad(g, paired, 0.3).grad_features.values(),
                            oracle::finite_diff([&](const Matrix& p) { return triplet_loss_grad(p, paired, 0.3).loss; }, g)
                                .values()));

    const Matrix teacher = oracle::random_matrix(8, 3, rng);
    soft_tri = std::max(soft_tri, oracle::max_rel_err(soft_triplet_loss_grad(g, teacher, paired).grad_features.values(),
                                                      oracle::finite_diff([&](const Matrix& p) {
                                                        return soft_triplet_loss_grad(p, teacher, paired).loss;
                                                      }, g).values()));

    // MMD composed through the encoder, for every kernel, bandwidth fixed at θ₀.
    const ModelParams theta = general_params({3, 5, 4}, rng);
    const Matrix x = oracle::random_matrix(6, 3, rng);
    const Matrix protos = forward(general_params({3, 5, 4}, rng), oracle::random_matrix(4, 3, rng));
    for (const KernelSpec base : {KernelSpec::linear(), KernelSpec::poly2(1.0), KernelSpec::gaussian_median()}) {
      const ForwardCache cache = forward_cached(theta, x);
      const KernelSpec k = resolve_kernel(base, cache.features, protos);
      const ModelParams analytic = backward(theta, cache, mmd2_grad_wrt_x(cache.features, protos, k));
      const auto numeric =
          oracle::finite_diff([&](const ModelParams& p) { return mmd2(forward(p, x), protos, k); }, theta);
      mmd = std::max(mmd, oracle::max_rel_err(analytic.values(), numeric));
    }
  }
  const double worst = std::max({ce, soft_ce, tri, soft_tri, mmd});
  return {worst < 1e-4, "max rel err ce " + fmt("%.1e", ce) + ", soft ce " + fmt("%.1e", soft_ce) + ", triplet " +
                            fmt("%.1e", tri) + ", soft triplet " + fmt("%.1e", soft_tri) + ", mmd " + fmt("%.1e", mmd)};
}

double param_distance(const ModelParams& a, const ModelParams& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
  return std::sqrt(s);
}

// 3. EMA contraction in closed form.
Outcome ema_closed_form() {
  std::mt19937_64 rng(303);
  const ModelParams student = ModelParams::random({8, 16, 4}, rng);
  const ModelParams start = ModelParams::random({8, 16, 4}, rng);
  const double d0 = param_distance(start, student);
  double worst = 0.0;
  for (double tau : {0.0, 0.5, 0.999}) {
    ModelParams t = start;
    for (int step = 1; step <= 100; ++step) {
      t = ema_update(t, student, tau);
      worst = std::max(worst, std::abs(param_distance(t, student) - std::pow(tau, step) * d0));
    }
  }
  return {worst <= 1e-10, "max deviation " + fmt("%.2e", worst)};
}

// 4. Aggregation endpoints and sample weighting.
Outcome aggregation_exact() {
  std::mt19937_64 rng(404);
  const EncoderDims dims{4, 6, 3};
  const ModelParams server = ModelParams::random(dims, rng);
  const ModelParams a = ModelParams::random(dims, rng);
  const ModelParams b = ModelParams::random(dims, rng);
  const std::vector<ClientUpdate> clients{{a, 100}, {b, 300}};
  const bool endpoint = aggregate(server, clients, 1.0) == server;
  const ModelParams mixed = aggregate(server, clients, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < dims.param_count(); ++i)
    worst = std::max(worst, std::abs(mixed.values()[i] - (0.25 * a.values()[i] + 0.75 * b.values()[i])));
  return {endpoint && worst <= 1e-12,
          std::string("alpha=1 bitwise ") + (endpoint ? "yes" : "no") + ", weight err " + fmt("%.2e", worst)};
}

// 5. Density clustering against the union-find reference.
Outcome dbscan_oracle() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> count(1, 80);
  std::uniform_int_distribution<std::size_t> min_pts(1, 6);
  std::uniform_real_distribution<double> eps(0.05, 0.6);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const Matrix x = oracle::random_matrix(count(rng), 2, rng, 0.0, 2.0);
    const double e = eps(rng);
    const std::size_t m = min_pts(rng);
    if (oracle::partition(dbscan(x, e, m)) != oracle::partition(oracle::dbscan(x, e, m))) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 100 partitions differ"};
}

// 6. Optimiser steps per round equal ppe_count·ceil(K_i/I).
Outcome ppe_accounting() {
  std::mt19937_64 rng(606);
  SynthSpec spec;
  spec.seed = 6;
  const SyntheticData data = generate(spec);
  std::uniform_int_distribution<std::size_t> ids(1, 8);
  std::uniform_int_distribution<std::size_t> imgs(1, 4);
  std::uniform_int_distribution<std::size_t> ppe(1, 3);
  std::uniform_real_distribution<double> eps(0.3, 0.9);
  std::uniform_int_distribution<std::size_t> camera(0, spec.cameras - 1);
  int checked = 0;
  int wrong = 0;
  int attempts = 0;
  while (checked < 20 && attempts < 200) {
    ++attempts;
    ExperimentConfig cfg;
    cfg.seed = rng();
    cfg.ids_per_batch = ids(rng);
    cfg.images_per_id = imgs(rng);
    cfg.ppe_count = ppe(rng);
    cfg.dbscan_eps = eps(rng);
    const ModelParams global = ModelParams::random(cfg.encoder_dims(), rng);
    ClientState cs;
    cs.raw_data = data.clients[camera(rng)].x;
    const auto labels = oracle::dbscan(oracle::forward(global, cs.raw_data), cfg.dbscan_eps, cfg.dbscan_min_pts);
    const std::size_t k = oracle::partition(labels).size();
    if (k == 0) continue;
    const PrototypeSet protos = compute_prototypes(global, data.source.x, data.source.ids);
    std::size_t observed = 0;
    client_round(cs, global, protos, cfg, rng(), [&](std::size_t) { ++observed; });
    const std::size_t expected = cfg.ppe_count * ((k + cfg.ids_per_batch - 1) / cfg.ids_per_batch);
    if (observed != expected) ++wrong;
    ++checked;
  }
  return {checked == 20 && wrong == 0, std::to_string(wrong) + " of " + std::to_string(checked) + " configs miscounted"};
}

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.seed = 1;
  cfg.synth.seed = 1;
  return cfg;
}

double best_map(const FederationResult& r) {
  double best = 0.0;
  for (const auto& rep : r.reports) best = std::max(best, rep.map);
  return best;
}

struct AblationRuns {
  double none = 0.0;
  double linear = 0.0;
  double poly2 = 0.0;
  double gaussian = 0.0;
  double seconds = 0.0;
};

AblationRuns kernel_ablation() {
  AblationRuns out;
  const auto t0 = Clock::now();
  for (auto [kind, slot] : {std::pair{MmdKernel::None, &out.none}, std::pair{MmdKernel::Poly2, &out.poly2},
                            std::pair{MmdKernel::Gaussian, &out.gaussian}}) {
    ExperimentConfig cfg = default_experiment();
    cfg.kernel = kind;
    *slot = best_map(run_federation(cfg));
  }
  out.seconds = seconds_since(t0);
  ExperimentConfig cfg = default_experiment();
  cfg.kernel = MmdKernel::Linear;
  out.linear = best_map(run_federation(cfg));
  return out;
}

// 7. Kernel ordering on the default synthetic task.
Outcome kernel_ordering(const AblationRuns& r) {
  const double gain = 100.0 * (r.gaussian - r.none);
  const bool pass = r.gaussian > r.none && r.poly2 < r.none && gain >= 3.0 && r.seconds < 300.0;
  return {pass, "best mAP gaussian " + fmt("%.4f", r.gaussian) + ", none " + fmt("%.4f", r.none) + ", linear " +
                    fmt("%.4f", r.linear) + ", poly2 " + fmt("%.4f", r.poly2) + "; gaussian-none " +
                    fmt("%+.2f", gain) + " points; " + fmt("%.1f", r.seconds) + " s"};
}

// 8. Prototype sub-sampling robustness.
Outcome proto_fraction(const AblationRuns& r) {
  ExperimentConfig cfg = default_experiment();
  cfg.proto_fraction = 0.1;
  const double tenth = best_map(run_federation(cfg));
  const double gap = 100.0 * std::abs(tenth - r.gaussian);
  return {gap <= 5.0, "best mAP at 0.1 " + fmt("%.4f", tenth) + " vs 1.0 " + fmt("%.4f", r.gaussian) + ", gap " +
                          fmt("%.2f", gap) + " points"};
}

// 9. Communication accounting.
Outcome communication() {
  ExperimentConfig fed_cfg = default_experiment();
  fed_cfg.rounds = 1;
  ExperimentConfig mmt_cfg = fed_cfg;
  mmt_cfg.comm_model = CommModel::Mmt;
  Simulation fed(fed_cfg);
  Simulation mmt(mmt_cfg);
  const RoundReport a = fed.run_round();
  const RoundReport b = mmt.run_round();
  const std::uint64_t backbone = fed_cfg.encoder_dims().param_count() * 8;
  const std::uint64_t clients = fed_cfg.synth.cameras;
  const bool one = a.traffic.uploaded_bytes == clients * backbone;
  const bool four = b.traffic.uploaded_bytes == 4 * clients * backbone;
  const double ratio = static_cast<double>(b.traffic.uploaded_bytes) / static_cast<double>(a.traffic.uploaded_bytes);
  const bool small = a.traffic.prototype_bytes < a.traffic.parameter_bytes;
  return {one && four && ratio == 4.0 && small,
          "upload per client " + std::to_string(a.traffic.uploaded_bytes / clients) + " B (backbone " +
              std::to_string(backbone) + " B), mmt ratio " + fmt("%.1f", ratio) + ", prototype " +
              std::to_string(a.traffic.prototype_bytes) + " B vs parameters " +
              std::to_string(a.traffic.parameter_bytes) + " B"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// 10. Two `run` invocations with one config.
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "fedproto_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path cfg = dir / "run.toml";
  std::ofstream(cfg) << "seed = 1\noutput = \"" << (dir / "report.jsonl").string() << "\"\n";
  std::ostringstream err;
  std::string first;
  std::string first_summary;
  bool same = true;
  for (int run = 0; run < 2; ++run) {
    if (app::run_command(cfg, err) != app::kOk) return {false, "run failed: " + err.str()};
    const std::string report = slurp(dir / "report.jsonl");
    const std::string summary = slurp(app::summary_path(dir / "report.jsonl"));
    if (run == 0) {
      first = report;
      first_summary = summary;
    } else {
      same = report == first && summary == first_summary;
    }
  }
  fs::remove_all(dir);
  return {same && !first.empty(), std::to_string(first.size()) + " report bytes, identical " + (same ? "yes" : "no")};
}

// 11. Retrieval metrics against the definitional oracle.
Outcome retrieval_oracle() {
  std::mt19937_64 rng(1111);
  std::uniform_int_distribution<int> id(0, 4);
  std::uniform_int_distribution<int> cam(0, 2);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    LabeledSet q{oracle::random_matrix(8, 3, rng), {}, {}};
    LabeledSet g{oracle::random_matrix(20, 3, rng), {}, {}};
    for (int r = 0; r < 8; ++r) {
      q.ids.push_back(id(rng));
      q.cameras.push_back(cam(rng));
    }
    for (int r = 0; r < 20; ++r) {
      g.ids.push_back(r < 8 ? q.ids[r] : id(rng));
      g.cameras.push_back(r < 8 ? (q.cameras[r] + 1) % 3 : cam(rng));
    }
    const auto want = oracle::retrieval(q.x, q.ids, q.cameras, g.x, g.ids, g.cameras);
    const RetrievalSplit split(q, g);
    const RetrievalScores got = evaluate_features(q.x, g.x, split);
    worst = std::max({worst, std::abs(got.map - want.map), std::abs(got.rank1 - want.rank1)});
  }
  const Matrix f = oracle::random_matrix(5, 3, rng);
  const RetrievalSplit perfect(LabeledSet{f, {0, 1, 2, 3, 4}, {0, 0, 0, 0, 0}},
                               LabeledSet{f, {0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}});
  const RetrievalScores p = evaluate_features(f, f, perfect);
  return {worst <= 1e-12 && p.map == 1.0 && p.rank1 == 1.0,
          "max err " + fmt("%.2e", worst) + ", perfect mAP " + fmt("%.3f", p.map) + " rank-1 " + fmt("%.3f", p.rank1)};
}

}  // namespace

int main() {
  app::configure_logging();
  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report(1, "mmd oracle", mmd_oracle);
  report(2, "gradient suite", gradient_suite);
  report(3, "ema closed form", ema_closed_form);
  report(4, "aggregation", aggregation_exact);
  report(5, "dbscan oracle", dbscan_oracle);
  report(6, "ppe accounting", ppe_accounting);
  AblationRuns ablation;
  bool ablation_ok = true;
  std::string ablation_error;
  try {
    ablation = kernel_ablation();
  } catch (const std::exception& e) {
    ablation_ok = false;
    ablation_error = e.what();
  }
  report(7, "kernel ablation", [&] {
    return ablation_ok ? kernel_ordering(ablation) : Outcome{false, "exception: " + ablation_error};
  });
  report(8, "prototype fraction", [&] {
    return ablation_ok ? proto_fraction(ablation) : Outcome{false, "exception: " + ablation_error};
  });
  report(9, "communication model", communication);
  report(10, "determinism", determinism);
  report(11, "retrieval oracle", retrieval_oracle);

  std::printf("%d of 11 criteria passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
