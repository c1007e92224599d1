#include "fedproto/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

#include "fedproto/losses.hpp"

namespace fedproto {

LossTerms& LossTerms::operator+=(const LossTerms& o) {
  ce += o.ce;
  soft_ce += o.soft_ce;
  triplet += o.triplet;
  soft_triplet += o.soft_triplet;
  mmd += o.mmd;
  total += o.total;
  return *this;
}

LossTerms LossTerms::scaled(double s) const {
  return {ce * s, soft_ce * s, triplet * s, soft_triplet * s, mmd * s, total * s};
}

PrototypeSet compute_prototypes(const ModelParams& model, const FeatureMatrix& source_x,
                                std::span<const int> source_labels) {
  if (source_x.rows() != source_labels.size()) throw DimensionError("compute_prototypes: label count mismatch");
  if (source_x.empty()) throw std::invalid_argument("compute_prototypes: empty source set");
  const FeatureMatrix feats = forward(model, source_x);

  const int max_id = *std::max_element(source_labels.begin(), source_labels.end());
  if (*std::min_element(source_labels.begin(), source_labels.end()) < 0) {
    throw std::invalid_argument("compute_prototypes: negative identity label");
  }
  const auto k = static_cast<std::size_t>(max_id) + 1;
  std::vector<std::size_t> counts(k, 0);
  PrototypeSet out{Matrix(k, feats.cols()), {}};
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    const auto id = static_cast<std::size_t>(source_labels[i]);
    ++counts[id];
    auto dst = out.prototypes.row(id);
    auto src = feats.row(i);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  for (std::size_t id = 0; id < k; ++id) {
    if (counts[id] == 0) {
      throw std::invalid_argument("compute_prototypes: identity " + std::to_string(id) + " has no samples");
    }
    for (double& v : out.prototypes.row(id)) v /= static_cast<double>(counts[id]);
    out.identity_ids.push_back(static_cast<int>(id));
  }
  return out;
}

PrototypeSet subsample_prototypes(const PrototypeSet& ps, double fraction, std::mt19937_64& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subsample_prototypes: fraction must lie in (0, 1]");
  if (ps.size() == 0) throw std::invalid_argument("subsample_prototypes: empty prototype set");
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ps.size()))));
  if (keep >= ps.size()) return ps;
  std::vector<std::size_t> pool(ps.size());
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(keep);
  std::sort(pool.begin(), pool.end());
  PrototypeSet out{ps.prototypes.select_rows(pool), {}};
  for (std::size_t i : pool) out.identity_ids.push_back(ps.identity_ids[i]);
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Seed streams.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kWarmupStream = 2;
constexpr std::uint64_t kPrototypeStream = 3;
constexpr std::uint64_t kPseudoClientStream = 4;
constexpr std::uint64_t kClientStream = 5;

struct StepGrads {
  ModelParams params;
  Matrix head;
  LossTerms terms;
  double first_ce = 0.0;
};

// Gradient of the pseudo-label loss
//   β1·CE(C∘F_s, y) + β2·CE(C∘F_s, softmax(C̄∘F_t)) + γ1·Tri(F_s, y) + γ2·SoftTri(F_s, F_t)
// optionally plus λ·MMD(F_s(batch), prototypes) on the batch features.
StepGrads pseudo_label_step(const FeatureMatrix& x, std::span<const int> y, const ModelParams& student,
                            const ModelParams& teacher, const ClassifierHead& head, const ClassifierHead& teacher_head,
                            const ExperimentConfig& cfg, const FeatureMatrix* mmd_targets,
                            const std::optional<KernelSpec>& kernel) {
  const auto& w = cfg.weights;
  const ForwardCache sc = forward_cached(student, x);
  const FeatureMatrix& fs = sc.features;
  Matrix grad_f(fs.rows(), fs.cols());
  StepGrads out{ModelParams(student.dims()), Matrix(head.w.rows(), head.w.cols()), {}, 0.0};

  auto add_into = [](Matrix& dst, const Matrix& src, double scale) {
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
  };

  const bool need_teacher = w.beta2 > 0.0 || w.gamma2 > 0.0;
  const FeatureMatrix ft = need_teacher ? forward(teacher, x) : FeatureMatrix();
  const bool triplet_ok = has_valid_triplet_anchor(y);

  if (w.beta1 > 0.0) {
    const HeadLoss ce = ce_loss_grad(head, fs, y);
    out.terms.ce = ce.loss;
    out.first_ce = ce.loss;
    add_into(grad_f, ce.grad_features, w.beta1);
    add_into(out.head, ce.grad_head, w.beta1);
  }
  if (w.beta2 > 0.0) {
    const HeadLoss soft = ce_loss_grad_soft(head, fs, softmax_rows(teacher_head.logits(ft)));
    out.terms.soft_ce = soft.loss;
    add_into(grad_f, soft.grad_features, w.beta2);
    add_into(out.head, soft.grad_head, w.beta2);
  }
  if (w.gamma1 > 0.0 && triplet_ok) {
    const FeatureLoss tri = triplet_loss_grad(fs, y, cfg.margin);
    out.terms.triplet = tri.loss;
    add_into(grad_f, tri.grad_features, w.gamma1);
  }
  if (w.gamma2 > 0.0 && triplet_ok) {
    const FeatureLoss st = soft_triplet_loss_grad(fs, ft, y);
    out.terms.soft_triplet = st.loss;
    add_into(grad_f, st.grad_features, w.gamma2);
  }
  if (mmd_targets != nullptr && kernel) {
    const KernelSpec k = resolve_kernel(*kernel, fs, *mmd_targets);
    out.terms.mmd = mmd2(fs, *mmd_targets, k);
    add_into(grad_f, mmd2_grad_wrt_x(fs, *mmd_targets, k), w.lambda);
  }
  out.terms.total = w.beta1 * out.terms.ce + w.beta2 * out.terms.soft_ce + w.gamma1 * out.terms.triplet +
                    w.gamma2 * out.terms.soft_triplet + w.lambda * out.terms.mmd;
  out.params = backward(student, sc, grad_f);
  return out;
}

ClassifierHead centroid_head(const FeatureMatrix& features, const PseudoDataset& ds) {
  ClassifierHead head(features.cols(), ds.num_clusters);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto f = features.row(ds.sample_indices[i]);
    const auto c = static_cast<std::size_t>(ds.pseudo_labels[i]);
    for (std::size_t j = 0; j < f.size(); ++j) head.w(j, c) += f[j];
  }
  for (std::size_t c = 0; c < ds.num_clusters; ++c) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < head.w.rows(); ++j) n2 += head.w(j, c) * head.w(j, c);
    if (n2 <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t j = 0; j < head.w.rows(); ++j) head.w(j, c) *= inv;
  }
  return head;
}

void check_finite(const LossTerms& t, const char* who) {
  if (!std::isfinite(t.total)) throw std::runtime_error(std::string(who) + ": non-finite loss");
}

FeatureMatrix choose_prototypes(const PrototypeSet& protos, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> pool(protos.size());
  std::iota(pool.begin(), pool.end(), 0);
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return protos.prototypes.select_rows(pool);
}

}  // namespace

ClientRoundResult client_round(ClientState& cs, const ModelParams& global, const PrototypeSet& protos,
                               const ExperimentConfig& cfg, std::uint64_t round_seed, const StepObserver& observer) {
  std::mt19937_64 rng(round_seed);
  ClientRoundStats stats;
  stats.client_id = cs.client_id;

  cs.student = global;
  cs.teacher = global;
  const FeatureMatrix feats = forward(global, cs.raw_data);
  cs.pseudo = build_pseudo_dataset(dbscan(feats, cfg.dbscan_eps, cfg.dbscan_min_pts));
  stats.num_clusters = cs.pseudo.num_clusters;
  stats.clustered_samples = cs.pseudo.size();
  if (cs.pseudo.num_clusters == 0) {
    stats.skipped = true;
    return {global, stats};
  }
  cs.head = centroid_head(feats, cs.pseudo);
  cs.teacher_head = cs.head;

  const std::optional<KernelSpec> kernel = cfg.kernel_spec();
  if (kernel && protos.size() == 0) throw std::invalid_argument("client_round: MMD enabled but no prototypes received");
  const bool full_mmd = kernel && cfg.mmd_mode == MmdMode::Full;

  LossTerms sum;
  for (std::size_t epoch = 0; epoch < cfg.ppe_count; ++epoch) {
    for (const auto& clusters : ppe_schedule(cs.pseudo.num_clusters, cfg.ids_per_batch, rng)) {
      const auto batch = sample_clusters(cs.pseudo, clusters, cfg.images_per_id, rng);
      std::vector<std::size_t> rows;
      std::vector<int> labels;
      for (const auto& e : batch) {
        rows.push_back(e.index);
        labels.push_back(e.pseudo_label);
      }
      const FeatureMatrix x = cs.raw_data.select_rows(rows);

      FeatureMatrix targets;
      if (kernel && !full_mmd) targets = choose_prototypes(protos, x.rows(), rng);
      StepGrads g = pseudo_label_step(x, labels, cs.student, cs.teacher, cs.head, cs.teacher_head, cfg,
                                      kernel && !full_mmd ? &targets : nullptr, kernel);
      if (full_mmd) {
        // MMD between every local sample and the full prototype set.
        const ForwardCache all = forward_cached(cs.student, cs.raw_data);
        const KernelSpec k = resolve_kernel(*kernel, all.features, protos.prototypes);
        g.terms.mmd = mmd2(all.features, protos.prototypes, k);
        g.terms.total += cfg.weights.lambda * g.terms.mmd;
        Matrix gf = mmd2_grad_wrt_x(all.features, protos.prototypes, k);
        for (double& v : gf.values()) v *= cfg.weights.lambda;
        const ModelParams extra = backward(cs.student, all, gf);
        for (std::size_t i = 0; i < extra.size(); ++i) g.params.values()[i] += extra.values()[i];
      }
      check_finite(g.terms, "client_round");

      cs.student = sgd_step(cs.student, g.params, cfg.lr);
      cs.head = sgd_step(cs.head, g.head, cfg.lr);
      cs.teacher = ema_update(cs.teacher, cs.student, cfg.weights.tau);
      cs.teacher_head = ema_update(cs.teacher_head, cs.head, cfg.weights.tau);
      sum += g.terms;
      ++stats.steps;
      if (observer) observer(stats.steps);
    }
  }
  stats.losses = sum.scaled(1.0 / static_cast<double>(stats.steps));
  return {cfg.transmit == Transmit::Teacher ? cs.teacher : cs.student, stats};
}

PseudoClientResult pseudo_client_round(const ModelParams& global, PseudoClient& pc, const ExperimentConfig& cfg,
                                       std::uint64_t round_seed, const StepObserver& observer) {
  if (pc.labels.size() != pc.x.rows() || pc.num_classes == 0) {
    throw std::invalid_argument("pseudo_client_round: source labels unavailable");
  }
  std::mt19937_64 rng(round_seed);
  const PseudoDataset ds = build_pseudo_dataset(pc.labels);
  ModelParams student = global;
  ModelParams teacher = global;
  ClassifierHead teacher_head = pc.head;

  PseudoClientResult out;
  LossTerms sum;
  for (std::size_t epoch = 0; epoch < cfg.ppe_count; ++epoch) {
    for (const auto& clusters : ppe_schedule(ds.num_clusters, cfg.ids_per_batch, rng)) {
      const auto batch = sample_clusters(ds, clusters, cfg.images_per_id, rng);
      std::vector<std::size_t> rows;
      std::vector<int> labels;
      for (const auto& e : batch) {
        rows.push_back(e.index);
        labels.push_back(e.pseudo_label);
      }
      const StepGrads g = pseudo_label_step(pc.x.select_rows(rows), labels, student, teacher, pc.head, teacher_head,
                                            cfg, nullptr, std::nullopt);
      check_finite(g.terms, "pseudo_client_round");
      if (out.steps == 0) out.first_ce = g.first_ce;
      student = sgd_step(student, g.params, cfg.lr);
      pc.head = sgd_step(pc.head, g.head, cfg.lr);
      teacher = ema_update(teacher, student, cfg.weights.tau);
      teacher_head = ema_update(teacher_head, pc.head, cfg.weights.tau);
      sum += g.terms;
      ++out.steps;
      if (observer) observer(out.steps);
    }
  }
  out.losses = sum.scaled(1.0 / static_cast<double>(out.steps));
  out.params = cfg.transmit == Transmit::Teacher ? teacher : student;
  pc.last_model = out.params;
  return out;
}

ModelParams warmup(const ModelParams& global, PseudoClient& pc, const ExperimentConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const PseudoDataset ds = build_pseudo_dataset(pc.labels);
  ExperimentConfig supervised = cfg;
  supervised.weights.beta1 = 1.0;
  supervised.weights.beta2 = 0.0;
  supervised.weights.gamma1 = 1.0;
  supervised.weights.gamma2 = 0.0;
  ModelParams params = global;
  for (std::size_t step = 0; step < cfg.warmup_steps; ++step) {
    const auto batch = pk_sample(ds, cfg.ids_per_batch, cfg.images_per_id, rng);
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (const auto& e : batch) {
      rows.push_back(e.index);
      labels.push_back(e.pseudo_label);
    }
    const StepGrads g =
        pseudo_label_step(pc.x.select_rows(rows), labels, params, params, pc.head, pc.head, supervised, nullptr, {});
    check_finite(g.terms, "warmup");
    params = sgd_step(params, g.params, cfg.lr);
    pc.head = sgd_step(pc.head, g.head, cfg.lr);
  }
  return params;
}

ModelParams aggregate(const ModelParams& pseudo_client, std::span<const ClientUpdate> clients, double alpha) {
  if (clients.empty()) throw std::invalid_argument("aggregate: no client models");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("aggregate: alpha must lie in [0, 1]");
  double total = 0.0;
  for (const auto& c : clients) {
    if (c.params.dims() != pseudo_client.dims()) throw DimensionError("aggregate: client model shape differs");
    total += static_cast<double>(c.num_samples);
  }
  if (total <= 0.0) throw std::invalid_argument("aggregate: client sample counts sum to zero");

  std::vector<double> mix(pseudo_client.size(), 0.0);
  for (const auto& c : clients) {
    const double w = static_cast<double>(c.num_samples) / total;
    auto v = c.params.values();
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += w * v[i];
  }
  ModelParams out = pseudo_client;
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * o[i] + (1.0 - alpha) * mix[i];
  return out;
}

RoundTraffic round_traffic(CommModel model, std::size_t clients, std::size_t param_count, std::size_t prototypes_sent,
                           std::size_t feature_dim) {
  constexpr std::uint64_t kBytes = 8;
  RoundTraffic t;
  t.parameter_bytes = param_count * kBytes;
  if (model == CommModel::Mmt) {
    t.uploaded_bytes = clients * 4 * t.parameter_bytes;
    t.downloaded_bytes = clients * 4 * t.parameter_bytes;
    return t;
  }
  t.prototype_bytes = prototypes_sent * feature_dim * kBytes;
  t.uploaded_bytes = clients * t.parameter_bytes;
  t.downloaded_bytes = clients * (t.parameter_bytes + t.prototype_bytes);
  return t;
}

void CommLedger::record(const RoundTraffic& t) {
  rounds_.push_back(t);
  total_up_ += t.uploaded_bytes;
  total_down_ += t.downloaded_bytes;
}

nlohmann::json to_json(const RoundReport& r) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : r.clients) {
    clients.push_back({{"client", c.client_id},
                       {"K_i", c.num_clusters},
                       {"clustered_samples", c.clustered_samples},
                       {"steps", c.steps},
                       {"skipped", c.skipped},
                       {"loss_terms",
                        {{"ce", c.losses.ce},
                         {"soft_ce", c.losses.soft_ce},
                         {"triplet", c.losses.triplet},
                         {"soft_triplet", c.losses.soft_triplet},
                         {"mmd", c.losses.mmd},
                         {"total", c.losses.total}}}});
  }
  return {{"round", r.round},
          {"per_client", clients},
          {"pseudo_client_loss", r.pseudo_client_loss},
          {"uploaded_bytes", r.traffic.uploaded_bytes},
          {"downloaded_bytes", r.traffic.downloaded_bytes},
          {"prototype_bytes", r.traffic.prototype_bytes},
          {"parameter_bytes", r.traffic.parameter_bytes},
          {"prototypes_sent", r.prototypes_sent},
          {"map", r.map},
          {"rank1", r.rank1}};
}

Simulation::Simulation(ExperimentConfig cfg) : Simulation(cfg, generate(cfg.synth)) {}

Simulation::Simulation(ExperimentConfig cfg, SyntheticData data)
    : cfg_(std::move(cfg)), data_(std::move(data)), split_(data_.query, data_.gallery) {
  cfg_.validate();
  std::mt19937_64 init_rng(derive_seed(kInitStream, 0));
  global_ = ModelParams::random(cfg_.encoder_dims(), init_rng);

  pseudo_.x = data_.source.x;
  pseudo_.labels = data_.source.ids;
  pseudo_.num_classes = static_cast<std::size_t>(*std::max_element(pseudo_.labels.begin(), pseudo_.labels.end())) + 1;
  pseudo_.head = ClassifierHead(cfg_.feature_dim, pseudo_.num_classes);
  pseudo_.last_model = global_;

  for (std::size_t c = 0; c < data_.clients.size(); ++c) {
    ClientState cs;
    cs.client_id = static_cast<int>(c);
    cs.raw_data = data_.clients[c].x;
    cs.student = global_;
    cs.teacher = global_;
    cs.rng_seed = derive_seed(kClientStream, c);
    clients_.push_back(std::move(cs));
  }
}

std::uint64_t Simulation::derive_seed(std::uint64_t stream, std::uint64_t index) const {
  return mix_seed(mix_seed(cfg_.seed, stream), index);
}

void Simulation::run_warmup() {
  global_ = warmup(global_, pseudo_, cfg_, derive_seed(kWarmupStream, 0));
  pseudo_.last_model = global_;
}

RoundReport Simulation::run_round() {
  const std::size_t round = round_ + 1;
  RoundReport report;
  report.round = round;

  // Transmission stage.
  const ModelParams& proto_model = cfg_.proto_source == PrototypeSource::Global ? global_ : pseudo_.last_model;
  const PrototypeSet all = compute_prototypes(proto_model, data_.source.x, data_.source.ids);
  std::mt19937_64 proto_rng(derive_seed(kPrototypeStream, round));
  const PrototypeSet sent = subsample_prototypes(all, cfg_.proto_fraction, proto_rng);
  report.prototypes_sent = sent.size();
  report.traffic = round_traffic(cfg_.comm_model, clients_.size(), global_.size(), sent.size(), cfg_.feature_dim);

  // Local training stage.
  const PseudoClientResult pc = pseudo_client_round(global_, pseudo_, cfg_, derive_seed(kPseudoClientStream, round));
  report.pseudo_client_loss = pc.losses.total;

  std::vector<std::optional<ClientRoundResult>> results(clients_.size());
  std::vector<std::exception_ptr> errors(clients_.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < clients_.size(); i += stride) {
      try {
        results[i] = client_round(clients_[i], global_, sent, cfg_, mix_seed(clients_[i].rng_seed, round));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(cfg_.workers, clients_.size());
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t, workers);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Aggregation stage.
  std::vector<ClientUpdate> updates;
  for (std::size_t i = 0; i < clients_.size(); ++i) {
    updates.push_back({std::move(results[i]->params), clients_[i].raw_data.rows()});
    report.clients.push_back(results[i]->stats);
  }
  global_ = aggregate(pc.params, updates, cfg_.weights.alpha);
  if (!global_.all_finite()) throw std::runtime_error("aggregation produced non-finite parameters");

  const RetrievalScores scores = evaluate(global_, split_);
  report.map = scores.map;
  report.rank1 = scores.rank1;
  ledger_.record(report.traffic);
  round_ = round;
  spdlog::debug("round {}: mAP {:.4f} rank-1 {:.4f} pseudo-client loss {:.4f}", round, report.map, report.rank1,
                report.pseudo_client_loss);
  return report;
}

FederationResult run_federation(const ExperimentConfig& cfg, const RoundCallback& on_round) {
  Simulation sim(cfg);
  sim.run_warmup();
  std::vector<RoundReport> reports;
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    try {
      reports.push_back(sim.run_round());
    } catch (const std::exception& e) {
      throw FederationAborted("round " + std::to_string(r + 1) + " failed: " + e.what(), std::move(reports));
    }
    if (on_round) on_round(reports.back());
  }
  return {std::move(reports), sim.global(), sim.ledger()};
}

}  // namespace fedproto
