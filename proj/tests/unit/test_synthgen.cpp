#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "fedproto/synthgen.hpp"
#include "oracles.hpp"

using namespace fedproto;

namespace {

/// Fraction of target samples whose nearest raw neighbour on another camera shares their id.
double cross_camera_nn_accuracy(const SyntheticData& d) {
  LabeledSet all{Matrix(0, d.query.x.cols()), {}, {}};
  for (const auto& c : d.clients) {
    all.x.append_rows(c.x);
    all.ids.insert(all.ids.end(), c.ids.begin(), c.ids.end());
    all.cameras.insert(all.cameras.end(), c.cameras.begin(), c.cameras.end());
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    double best = -1.0;
    int id = -1;
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (all.cameras[j] == all.cameras[i]) continue;
      const double dist = oracle::sq_dist(all.x, i, all.x, j);
      if (best < 0 || dist < best) {
        best = dist;
        id = all.ids[j];
      }
    }
    hits += id == all.ids[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(all.size());
}

}  // namespace

TEST_CASE("partition into camera clients") {
  SynthSpec spec;
  spec.seed = 3;
  const SyntheticData d = generate(spec);
  REQUIRE(d.clients.size() == 6);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(d.clients[c].size() == spec.num_target_ids * spec.samples_per_id_per_camera);
    CHECK(std::set<int>(d.clients[c].cameras.begin(), d.clients[c].cameras.end()) == std::set<int>{static_cast<int>(c)});
  }
  CHECK(d.source.size() == spec.num_source_ids * spec.cameras * spec.samples_per_id_per_camera);
  CHECK(d.query.size() == spec.num_target_ids * spec.cameras);
  CHECK(d.gallery.size() == spec.num_target_ids * spec.cameras * (spec.eval_samples_per_id_per_camera - 1));
}

TEST_CASE("identity spaces are disjoint") {
  SynthSpec spec;
  const SyntheticData d = generate(spec);
  const std::set<int> source(d.source.ids.begin(), d.source.ids.end());
  std::set<int> target;
  for (const auto& c : d.clients) target.insert(c.ids.begin(), c.ids.end());
  CHECK(source.size() == spec.num_source_ids);
  CHECK(target.size() == spec.num_target_ids);
  for (int id : target) CHECK_FALSE(source.contains(id));
  CHECK(*source.rbegin() == static_cast<int>(spec.num_source_ids) - 1);
}

TEST_CASE("generation is deterministic") {
  SynthSpec spec;
  spec.seed = 17;
  CHECK(generate(spec) == generate(spec));
  SynthSpec other = spec;
  other.seed = 18;
  CHECK_FALSE(generate(spec) == generate(other));
}

TEST_CASE("zero shift without noise collapses identities") {
  SynthSpec spec;
  spec.shift_strength = 0.0;
  spec.noise_std = 1e-12;
  spec.num_target_ids = 5;
  const SyntheticData d = generate(spec);
  std::vector<std::vector<double>> first(200);
  auto check_set = [&](const LabeledSet& s) {
    for (std::size_t r = 0; r < s.size(); ++r) {
      auto& ref = first[static_cast<std::size_t>(s.ids[r])];
      if (ref.empty()) {
        ref.assign(s.x.row(r).begin(), s.x.row(r).end());
        continue;
      }
      for (std::size_t c = 0; c < s.x.cols(); ++c) CHECK(std::abs(s.x(r, c) - ref[c]) <= 1e-10);
    }
  };
  for (const auto& c : d.clients) check_set(c);
  check_set(d.query);
  check_set(d.gallery);
}

TEST_CASE("shift controls cross-camera difficulty") {
  SynthSpec spec;
  spec.num_target_ids = 20;
  spec.seed = 5;
  spec.shift_strength = 0.0;
  spec.noise_std = 0.05;
  CHECK(cross_camera_nn_accuracy(generate(spec)) > 0.95);

  spec.noise_std = 0.3;
  for (double s : {1.0, 1.5}) {
    spec.shift_strength = s;
    CHECK(cross_camera_nn_accuracy(generate(spec)) < 0.60);
  }
}

TEST_CASE("training and evaluation samples are distinct") {
  SynthSpec spec;
  const SyntheticData d = generate(spec);
  std::set<std::vector<double>> train;
  for (const auto& c : d.clients)
    for (std::size_t r = 0; r < c.size(); ++r) train.insert({c.x.row(r).begin(), c.x.row(r).end()});
  for (const auto* s : {&d.query, &d.gallery})
    for (std::size_t r = 0; r < s->size(); ++r) CHECK_FALSE(train.contains({s->x.row(r).begin(), s->x.row(r).end()}));
}

TEST_CASE("spec validation") {
  SynthSpec spec;
  spec.cameras = 0;
  CHECK_THROWS(generate(spec));
  spec = {};
  spec.shift_strength = -1.0;
  CHECK_THROWS(generate(spec));
  spec = {};
  spec.noise_std = 0.0;
  CHECK_THROWS(generate(spec));
  spec = {};
  spec.eval_samples_per_id_per_camera = 1;
  CHECK_THROWS(generate(spec));
}

TEST_CASE("dataset dump round-trips") {
  SynthSpec spec;
  spec.num_source_ids = 5;
  spec.num_target_ids = 4;
  spec.cameras = 3;
  const SyntheticData d = generate(spec);
  const auto path = std::filesystem::temp_directory_path() / "fedproto_test_dataset.bin";
  save_dataset(path, d);
  CHECK(load_dataset(path) == d);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 1);
  CHECK_THROWS(load_dataset(path));
  std::filesystem::remove(path);
}
