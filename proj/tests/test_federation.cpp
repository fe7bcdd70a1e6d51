#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "fedweight/checkpoint.hpp"
#include "fedweight/error.hpp"
#include "fedweight/evaluation.hpp"
#include "fedweight/federation.hpp"
#include "fedweight/rng.hpp"
#include "fedweight/synth.hpp"
#include "model_oracles.hpp"

#include <json.hpp>

using namespace fedweight;

namespace {

ClientUpdateMsg scalar_update(int id, double value, double quality) {
  ClientUpdateMsg m;
  m.client_id = id;
  m.quality_raw = quality;
  m.n_samples = 1;
  m.params.layers.push_back({"output", Matrix(1, 1, value), {value}});
  return m;
}

ClientUpdateMsg random_update(Rng& rng, int id, double quality) {
  ClientUpdateMsg m;
  m.client_id = id;
  m.quality_raw = quality;
  m.n_samples = 3;
  m.params = oracle::random_params(rng, 5, 3);
  return m;
}

std::vector<ClientData> small_clients(int n, double sigma_step) {
  std::vector<ClientData> out;
  for (int i = 0; i < n; ++i) {
    const auto rec = generate_subject(i, 14.0, 30.0, {4, 4}, {70.0 + 8.0 * i}, 200 + static_cast<unsigned>(i));
    out.push_back(make_client_data(rec, sigma_step * i));
  }
  return out;
}

/// Frames [t0, t1) of a subject plus the matching label samples.
SubjectRecord slice(const SubjectRecord& r, int t0, int t1) {
  SubjectRecord s = r;
  s.frames.t = t1 - t0;
  const auto ppf = r.frames.pixels_per_frame();
  s.frames.data.assign(r.frames.data.begin() + static_cast<std::ptrdiff_t>(t0 * ppf),
                       r.frames.data.begin() + static_cast<std::ptrdiff_t>(t1 * ppf));
  std::vector<double> lab(r.label.samples().begin() + t0, r.label.samples().begin() + t1 - 1);
  s.label = PpgTrace(std::move(lab), r.label.fs());
  s.true_hr_bpm.assign(r.true_hr_bpm.begin() + t0, r.true_hr_bpm.begin() + t1 - 1);
  return s;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("client selection") {
  std::vector<int> ids(25);
  for (int i = 0; i < 25; ++i) ids[static_cast<std::size_t>(i)] = 24 - i;
  auto all = select_clients(ids, 1.0, 3, 1);
  CHECK(all.size() == 25);
  CHECK(std::is_sorted(all.begin(), all.end()));

  const auto five = select_clients(ids, 0.2, 3, 1);
  CHECK(five.size() == 5);
  CHECK(std::adjacent_find(five.begin(), five.end()) == five.end());
  CHECK(select_clients(ids, 0.2, 3, 1) == five);
  CHECK(select_clients(ids, 0.01, 3, 1).size() == 1);
  CHECK(select_clients(ids, 0.3, 3, 1).size() == 8);

  bool differs = false;
  for (int round = 2; round < 8; ++round) differs = differs || select_clients(ids, 0.2, 3, round) != five;
  CHECK(differs);

  CHECK_THROWS_AS(select_clients(std::vector<int>{}, 1.0, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(select_clients(ids, 0.0, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(select_clients(ids, 1.5, 3, 1), InvalidArgument);
}

TEST_CASE("quality maps") {
  CHECK(compute_quality(0.05, QualityMap::InverseNoise) == doctest::Approx(10.0));
  CHECK(compute_quality(0.95, QualityMap::InverseNoise) == doctest::Approx(1.0));
  const std::vector<double> raw{compute_quality(0.05, QualityMap::InverseNoise),
                                compute_quality(0.95, QualityMap::InverseNoise)};
  const auto norm = normalize_qualities(raw);
  CHECK(norm[0] == doctest::Approx(10.0 / 11.0));
  CHECK(norm[1] == doctest::Approx(1.0 / 11.0));

  CHECK(compute_quality(0.3, QualityMap::Literal) == 0.3);
  CHECK(compute_quality(0.3, QualityMap::MaxMinus, 0.8) == doctest::Approx(0.55));
  CHECK_THROWS_AS(compute_quality(-0.1, QualityMap::InverseNoise), InvalidArgument);

  const std::vector<double> same(7, compute_quality(0.0, QualityMap::InverseNoise));
  for (double l : normalize_qualities(same)) CHECK(l == 1.0 / 7.0);
  for (double l : normalize_qualities(std::vector<double>(3, 0.0))) CHECK(l == 1.0 / 3.0);

  Rng rng(3);
  std::vector<double> r(25);
  for (double& v : r) v = rng.uniform(0.0, 20.0);
  double sum = 0.0;
  for (double v : normalize_qualities(r)) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-12);

  CHECK_THROWS_AS(normalize_qualities(std::vector<double>{}), InvalidArgument);
  CHECK_THROWS_AS(normalize_qualities(std::vector<double>{1.0, -1.0}), InvalidArgument);
}

TEST_CASE("aggregation examples") {
  {
    std::vector<ClientUpdateMsg> u{scalar_update(0, 4, 1), scalar_update(1, 2, 1)};
    CHECK(aggregate(u, AggregationPolicy::FedAvg).layers[0].weight.data[0] == 3.0);
  }
  {
    std::vector<ClientUpdateMsg> u{scalar_update(0, 4, 2), scalar_update(1, 1, 1), scalar_update(2, 1, 1)};
    const auto p = aggregate(u, AggregationPolicy::FedWeight);
    CHECK(p.layers[0].weight.data[0] == doctest::Approx(2.5));
    CHECK(p.layers[0].bias[0] == doctest::Approx(2.5));
    CHECK(aggregate(u, AggregationPolicy::FedAvg).layers[0].weight.data[0] == doctest::Approx(2.0));
  }
  {
    // Sample weighting multiplies quality by window count.
    auto a = scalar_update(0, 4, 1);
    auto b = scalar_update(1, 1, 1);
    a.n_samples = 3;
    std::vector<ClientUpdateMsg> u{a, b};
    CHECK(aggregate(u, AggregationPolicy::FedAvg, true).layers[0].weight.data[0] == doctest::Approx(3.25));
  }
  CHECK_THROWS_AS(aggregate(std::vector<ClientUpdateMsg>{}, AggregationPolicy::FedAvg), InvalidArgument);

  std::vector<ClientUpdateMsg> bad{scalar_update(0, 1, 1), scalar_update(1, 1, 1)};
  bad[1].params.layers[0].bias.push_back(0.0);
  CHECK_THROWS_WITH_AS(aggregate(bad, AggregationPolicy::FedAvg),
                       doctest::Contains("layer 'output'"), InvalidArgument);
}

TEST_CASE("aggregation properties") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ClientUpdateMsg> u;
    for (int i = 0; i < 6; ++i) u.push_back(random_update(rng, i, rng.uniform(0.1, 5.0)));
    const auto p = aggregate(u, AggregationPolicy::FedWeight);

    auto shuffled = u;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[1], shuffled[4]);
    CHECK(aggregate(shuffled, AggregationPolicy::FedWeight) == p);

    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      for (std::size_t e = 0; e < p.layers[l].weight.data.size(); ++e) {
        double lo = 1e300, hi = -1e300;
        for (const auto& m : u) {
          lo = std::min(lo, m.params.layers[l].weight.data[e]);
          hi = std::max(hi, m.params.layers[l].weight.data[e]);
        }
        CHECK(p.layers[l].weight.data[e] >= lo - 1e-15);
        CHECK(p.layers[l].weight.data[e] <= hi + 1e-15);
      }
    }

    for (auto& m : u) m.quality_raw = 0.0;
    u[3].quality_raw = 2.5;
    CHECK(aggregate(u, AggregationPolicy::FedWeight) == u[3].params);

    for (auto& m : u) m.quality_raw = 1.7;
    CHECK(aggregate(u, AggregationPolicy::FedWeight) == aggregate(u, AggregationPolicy::FedAvg));
  }
}

TEST_CASE("failed updates are excluded") {
  std::vector<ClientUpdateMsg> u{scalar_update(0, 4, 1), scalar_update(1, 100, 1), scalar_update(2, 2, 1)};
  u[1].failed = true;
  CHECK(aggregate(u, AggregationPolicy::FedAvg).layers[0].weight.data[0] == 3.0);
  CHECK(aggregation_weights(u, AggregationPolicy::FedAvg).size() == 2);
}

TEST_CASE("update codec") {
  Rng rng(9);
  auto m = random_update(rng, 12, 3.5);
  m.round_id = 4;
  m.mean_loss = 0.125;
  m.failed = true;
  const auto bytes = encode_update(m);
  CHECK(decode_update(bytes) == m);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_update(bad), CheckpointError);
  try {
    decode_update(std::span(bytes).first(bytes.size() - 3));
    FAIL("expected truncation");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Truncated);
  }
  auto longer = bytes;
  longer.push_back(0);
  try {
    decode_update(longer);
    FAIL("expected trailing-byte error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Malformed);
  }
}

TEST_CASE("checkpoint") {
  Rng rng(11);
  const auto p = oracle::random_params(rng, 9, 4);
  const auto bytes = serialize_checkpoint(p);
  CHECK(deserialize_checkpoint(bytes) == p);
  CHECK(bytes[0] == 'F');
  CHECK(bytes[3] == 'K');

  const ModelParams empty;
  CHECK(deserialize_checkpoint(serialize_checkpoint(empty)) == empty);

  auto kind_of = [](std::span<const std::uint8_t> b) {
    try {
      deserialize_checkpoint(b);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  CHECK(kind_of(std::span(bytes).first(bytes.size() - 1)) == static_cast<int>(CheckpointError::Kind::Truncated));
  CHECK(kind_of(std::span(bytes).first(10)) == static_cast<int>(CheckpointError::Kind::Truncated));
  auto magic = bytes;
  magic[1] = 'x';
  CHECK(kind_of(magic) == static_cast<int>(CheckpointError::Kind::BadMagic));
  auto version = bytes;
  version[4] = 9;
  CHECK(kind_of(version) == static_cast<int>(CheckpointError::Kind::VersionMismatch));
}

TEST_CASE("client update") {
  const auto clients = small_clients(2, 0.0);
  const auto init = init_params(48, 8, 1);
  const auto noop = client_update(clients[0], init, 0, 1, 1.0, 5);
  CHECK(noop.params == init);
  CHECK(noop.n_samples == static_cast<std::int64_t>(clients[0].windows.size()));
  CHECK_FALSE(noop.failed);

  ClientData twin = clients[0];
  twin.client_id = 1;
  const auto a = client_update(clients[0], init, -1, 1, 1.0, 5);
  const auto b = client_update(twin, init, -1, 1, 1.0, 5);
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == init);
  CHECK(a.mean_loss > 0.0);

  ClientData broken = clients[1];
  for (auto& w : broken.windows) w.targets.assign(w.targets.size(), 1e300);
  const auto f = client_update(broken, init, -1, 1, 1.0, 5);
  CHECK(f.failed);
  CHECK(f.params == init);
}

TEST_CASE("round loop") {
  const auto clients = small_clients(4, 0.2);
  const auto init = init_params(48, 8, 2);

  RoundConfig cfg;
  cfg.n_rounds = 0;
  CHECK(run_federation(clients, init, cfg).global_params == init);

  cfg.n_rounds = 3;
  cfg.seed = 77;
  cfg.threads = 2;
  const auto mem = run_federation(clients, init, cfg);
  CHECK(mem.round == 3);
  REQUIRE(mem.history.size() == 3);
  for (const auto& r : mem.history) {
    double s = 0.0;
    for (double l : r.lambdas) s += l;
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(r.participants.size() == 4);
    // Cleaner clients get more weight.
    CHECK(r.lambdas[0] > r.lambdas[3]);
  }

  auto serial = cfg;
  serial.serialize_transport = true;
  serial.threads = 1;
  CHECK(run_federation(clients, init, serial).global_params == mem.global_params);
  CHECK(run_federation(clients, init, cfg).global_params == mem.global_params);

  auto other_seed = cfg;
  other_seed.seed = 78;
  CHECK_FALSE(run_federation(clients, init, other_seed).global_params == mem.global_params);

  // Uniform noise: both policies follow the same trajectory.
  auto flat = small_clients(4, 0.0);
  auto fw = cfg;
  fw.aggregation = AggregationPolicy::FedWeight;
  auto fa = cfg;
  fa.aggregation = AggregationPolicy::FedAvg;
  CHECK(run_federation(flat, init, fw).global_params == run_federation(flat, init, fa).global_params);

  // A diverging client is logged and dropped.
  auto with_bad = clients;
  for (auto& w : with_bad[2].windows) w.targets.assign(w.targets.size(), 1e300);
  const auto dropped = run_federation(with_bad, init, cfg);
  CHECK(dropped.history[0].failed == std::vector<int>{2});
  CHECK(dropped.history[0].participants == std::vector<int>{0, 1, 3});

  std::ostringstream hist;
  write_history_jsonl(dropped.history, hist);
  std::istringstream lines(hist.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("round_id") == n + 1);
    CHECK(j.at("lambda").size() == 3);
    CHECK(j.at("failed") == nlohmann::json::array({2}));
    CHECK(j.contains("mean_client_loss"));
    ++n;
  }
  CHECK(n == 3);
}

TEST_CASE("single client learns its own pulse") {
  const auto rec = generate_subject(0, 60.0, 30.0, {8, 8}, {78.0, 112.0, 95.0}, 31);
  // Train on the first two segments, score the third.
  const auto train = slice(rec, 0, 1200);
  const auto test = slice(rec, 1200, rec.frames.t);
  std::vector<ClientData> one{make_client_data(train, 0.0)};
  RoundConfig cfg;
  cfg.seed = 3;
  const auto state = run_federation(one, init_params(192, 16, 8), cfg);
  const auto score = score_run(state.global_params, std::vector<SubjectRecord>{test});
  CHECK(score.n_windows == 1);
  CHECK(score.mae_bpm < 5.0);
}

TEST_CASE("names") {
  CHECK(parse_policy("fedavg") == AggregationPolicy::FedAvg);
  CHECK(parse_policy(to_string(AggregationPolicy::FedWeight)) == AggregationPolicy::FedWeight);
  for (auto m : {QualityMap::InverseNoise, QualityMap::MaxMinus, QualityMap::Literal}) {
    CHECK(parse_quality_map(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_policy("fedprox"), InvalidArgument);
  CHECK_THROWS_AS(parse_quality_map("sqrt"), InvalidArgument);
}

}  // TEST_SUITE
