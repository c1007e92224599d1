#include "fedproto/synthgen.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "binary_io.hpp"

namespace fedproto {

void SynthSpec::validate() const {
  if (num_source_ids < 1) throw std::invalid_argument("synth: num_source_ids must be at least 1");
  if (num_target_ids < 1) throw std::invalid_argument("synth: num_target_ids must be at least 1");
  if (cameras < 1) throw std::invalid_argument("synth: cameras must be at least 1");
  if (samples_per_id_per_camera < 1) throw std::invalid_argument("synth: samples_per_id_per_camera must be at least 1");
  if (eval_samples_per_id_per_camera < 2) {
    throw std::invalid_argument("synth: eval_samples_per_id_per_camera must be at least 2");
  }
  if (latent_dim < 1) throw std::invalid_argument("synth: latent_dim must be at least 1");
  if (!(shift_strength >= 0.0) || !std::isfinite(shift_strength)) {
    throw std::invalid_argument("synth: shift_strength must be non-negative");
  }
  if (!(noise_std > 0.0) || !std::isfinite(noise_std)) throw std::invalid_argument("synth: noise_std must be positive");
}

namespace {

struct CameraMap {
  Matrix a;  // d×d, applied as A·z
  std::vector<double> b;
};

CameraMap identity_map(std::size_t d) {
  CameraMap m{Matrix(d, d), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) m.a(i, i) = 1.0;
  return m;
}

CameraMap random_map(std::size_t d, double strength, std::mt19937_64& rng) {
  CameraMap m = identity_map(d);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  std::normal_distribution<double> u(0.0, 1.0);
  for (double& v : m.a.values()) v += strength * g(rng);
  for (double& v : m.b) v = strength * u(rng);
  return m;
}

void emit(LabeledSet& out, const CameraMap& cam, std::span<const double> z, int id, int camera, double noise,
          std::mt19937_64& rng) {
  const std::size_t d = z.size();
  std::normal_distribution<double> eps(0.0, noise);
  Matrix row(1, d);
  for (std::size_t i = 0; i < d; ++i) {
    double v = cam.b[i];
    for (std::size_t j = 0; j < d; ++j) v += cam.a(i, j) * z[j];
    row(0, i) = v + eps(rng);
  }
  out.x.append_rows(row);
  out.ids.push_back(id);
  out.cameras.push_back(camera);
}

LabeledSet empty_set(std::size_t d) { return {Matrix(0, d), {}, {}}; }

}  // namespace

SyntheticData generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t d = spec.latent_dim;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);

  Matrix source_latent(spec.num_source_ids, d);
  for (double& v : source_latent.values()) v = std_normal(rng);
  Matrix target_latent(spec.num_target_ids, d);
  for (double& v : target_latent.values()) v = std_normal(rng);

  std::vector<CameraMap> target_cams;
  target_cams.reserve(spec.cameras);
  for (std::size_t c = 0; c < spec.cameras; ++c) target_cams.push_back(random_map(d, spec.shift_strength, rng));
  const CameraMap source_cam = identity_map(d);

  SyntheticData data{empty_set(d), {}, empty_set(d), empty_set(d)};
  const auto source_ids = static_cast<int>(spec.num_source_ids);

  for (std::size_t k = 0; k < spec.num_source_ids; ++k) {
    for (std::size_t c = 0; c < spec.cameras; ++c) {
      for (std::size_t s = 0; s < spec.samples_per_id_per_camera; ++s) {
        emit(data.source, source_cam, source_latent.row(k), static_cast<int>(k), static_cast<int>(c), spec.noise_std,
             rng);
      }
    }
  }

  data.clients.assign(spec.cameras, empty_set(d));
  for (std::size_t c = 0; c < spec.cameras; ++c) {
    for (std::size_t k = 0; k < spec.num_target_ids; ++k) {
      const int id = source_ids + static_cast<int>(k);
      for (std::size_t s = 0; s < spec.samples_per_id_per_camera; ++s) {
        emit(data.clients[c], target_cams[c], target_latent.row(k), id, static_cast<int>(c), spec.noise_std, rng);
      }
    }
  }

  for (std::size_t k = 0; k < spec.num_target_ids; ++k) {
    const int id = source_ids + static_cast<int>(k);
    for (std::size_t c = 0; c < spec.cameras; ++c) {
      for (std::size_t s = 0; s < spec.eval_samples_per_id_per_camera; ++s) {
        LabeledSet& dst = s == 0 ? data.query : data.gallery;
        emit(dst, target_cams[c], target_latent.row(k), id, static_cast<int>(c), spec.noise_std, rng);
      }
    }
  }
  return data;
}

namespace {

void write_block(detail::ByteWriter& w, const LabeledSet& set) {
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.f64s(set.x.values());
  for (int v : set.ids) w.i32(v);
  for (int v : set.cameras) w.i32(v);
}

LabeledSet read_block(detail::ByteReader& r, std::size_t dim) {
  const std::size_t rows = r.u32();
  LabeledSet set{Matrix(rows, dim), std::vector<int>(rows), std::vector<int>(rows)};
  r.f64s(set.x.values());
  for (int& v : set.ids) v = r.i32();
  for (int& v : set.cameras) v = r.i32();
  return set;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const SyntheticData& data) {
  detail::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(data.clients.size()));
  w.u32(static_cast<std::uint32_t>(data.source.x.cols()));
  write_block(w, data.source);
  for (const auto& c : data.clients) write_block(w, c);
  write_block(w, data.query);
  write_block(w, data.gallery);
  detail::write_file_bytes(path, w.bytes());
}

SyntheticData load_dataset(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  detail::ByteReader r(bytes);
  const std::size_t clients = r.u32();
  const std::size_t dim = r.u32();
  SyntheticData data;
  data.source = read_block(r, dim);
  for (std::size_t c = 0; c < clients; ++c) data.clients.push_back(read_block(r, dim));
  data.query = read_block(r, dim);
  data.gallery = read_block(r, dim);
  if (!r.at_end()) throw std::runtime_error("load_dataset: trailing bytes in " + path.string());
  return data;
}

}  // namespace fedproto
