#include "fedweight/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "fedweight/checkpoint.hpp"
#include "fedweight/error.hpp"
#include "fedweight/rng.hpp"

namespace fedweight {

namespace {

constexpr std::uint8_t kUpdateMagic[4] = {'F', 'W', 'U', 'P'};
constexpr std::uint32_t kUpdateVersion = 1;

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

std::vector<const ClientUpdateMsg*> live_sorted(std::span<const ClientUpdateMsg> updates) {
  std::vector<const ClientUpdateMsg*> live;
  for (const auto& u : updates) {
    if (!u.failed) live.push_back(&u);
  }
  std::stable_sort(live.begin(), live.end(), [](const auto* a, const auto* b) {
    return a->client_id < b->client_id;
  });
  return live;
}

}  // namespace

double compute_quality(double sigma_s, QualityMap map, double sigma_max, double eps) {
  if (!(sigma_s >= 0.0)) throw InvalidArgument("sigma_s must be >= 0");
  switch (map) {
    case QualityMap::InverseNoise:
      return 1.0 / (sigma_s + eps);
    case QualityMap::MaxMinus:
      return std::max(0.0, sigma_max - sigma_s) + eps;
    case QualityMap::Literal:
      return sigma_s;
  }
  throw InvalidArgument("unknown quality map");
}

std::vector<double> normalize_qualities(std::span<const double> raw) {
  if (raw.empty()) throw InvalidArgument("no qualities to normalize");
  for (double q : raw) {
    if (!(q >= 0.0) || !std::isfinite(q)) throw InvalidArgument("raw quality must be finite and >= 0");
  }
  const double n = static_cast<double>(raw.size());
  if (std::all_of(raw.begin(), raw.end(), [&](double q) { return q == raw.front(); })) {
    return std::vector<double>(raw.size(), 1.0 / n);
  }
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / total;
  return out;
}

ClientData make_client_data(const SubjectRecord& record, double sigma, int window) {
  ClientData c;
  c.client_id = record.subject_id;
  c.sigma = sigma;
  c.windows = make_windows(make_difference_frames(record.frames), record.label, window);
  return c;
}

std::vector<std::uint8_t> encode_update(const ClientUpdateMsg& msg) {
  ByteWriter w;
  w.bytes(kUpdateMagic);
  w.u32(kUpdateVersion);
  w.i64(msg.round_id);
  w.i64(msg.client_id);
  w.f64(msg.quality_raw);
  w.i64(msg.n_samples);
  w.f64(msg.mean_loss);
  w.u32(msg.failed ? 1u : 0u);
  write_params(w, msg.params);
  return w.take();
}

ClientUpdateMsg decode_update(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kUpdateMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "bad magic: not a client update");
  }
  if (const auto v = r.u32(); v != kUpdateVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "unsupported update version " + std::to_string(v));
  }
  ClientUpdateMsg msg;
  msg.round_id = static_cast<int>(r.i64());
  msg.client_id = static_cast<int>(r.i64());
  msg.quality_raw = r.f64();
  msg.n_samples = r.i64();
  msg.mean_loss = r.f64();
  msg.failed = r.u32() != 0;
  msg.params = read_params(r);
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointError::Kind::Malformed, "trailing bytes after client update");
  }
  return msg;
}

std::vector<int> select_clients(std::span<const int> all_clients, double fraction,
                                std::uint64_t seed, int round) {
  if (all_clients.empty()) throw InvalidArgument("empty client pool");
  if (!(fraction > 0.0) || fraction > 1.0) throw InvalidArgument("client fraction must be in (0, 1]");
  const std::size_t n = all_clients.size();
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)), 1, n);
  std::vector<int> ids(all_clients.begin(), all_clients.end());
  if (k < n) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(round)));
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next() % (n - i));
      std::swap(ids[i], ids[j]);
    }
    ids.resize(k);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

ClientUpdateMsg client_update(const ClientData& client, const ModelParams& global_params,
                              int local_steps, int round_id, double quality_raw,
                              std::uint64_t seed, double lr) {
  ClientUpdateMsg msg;
  msg.round_id = round_id;
  msg.client_id = client.client_id;
  msg.quality_raw = quality_raw;
  msg.n_samples = static_cast<std::int64_t>(client.windows.size());
  msg.params = global_params;

  const std::size_t n_windows = client.windows.size();
  const std::size_t steps =
      local_steps < 0 ? n_windows : static_cast<std::size_t>(local_steps);
  if (steps == 0) return msg;
  if (n_windows == 0) throw InvalidArgument("client " + std::to_string(client.client_id) + " has no data");

  OptimizerState opt = OptimizerState::for_params(global_params, lr);
  Rng rng(seed);
  std::vector<std::size_t> order(n_windows);
  double loss_sum = 0.0;
  try {
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t pos = s % n_windows;
      if (pos == 0) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = n_windows; i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(rng.next() % i)]);
        }
      }
      LossAndGrad lg = loss_and_grad(msg.params, client.windows[order[pos]]);
      loss_sum += lg.loss;
      adam_step(msg.params, lg.grads, opt);
    }
  } catch (const TrainingOverflow&) {
    msg.failed = true;
    msg.params = global_params;
    return msg;
  }
  msg.mean_loss = loss_sum / static_cast<double>(steps);
  return msg;
}

std::vector<double> aggregation_weights(std::span<const ClientUpdateMsg> updates,
                                        AggregationPolicy policy, bool weight_by_samples) {
  const auto live = live_sorted(updates);
  if (live.empty()) throw InvalidArgument("no participating clients to aggregate");
  std::vector<double> raw;
  for (const auto* u : live) {
    double q = policy == AggregationPolicy::FedWeight ? u->quality_raw : 1.0;
    if (weight_by_samples) q *= static_cast<double>(u->n_samples);
    raw.push_back(q);
  }
  return normalize_qualities(raw);
}

ModelParams aggregate(std::span<const ClientUpdateMsg> updates, AggregationPolicy policy,
                      bool weight_by_samples) {
  const auto live = live_sorted(updates);
  if (live.empty()) throw InvalidArgument("no participating clients to aggregate");
  const std::vector<double> lambdas = aggregation_weights(updates, policy, weight_by_samples);

  const ModelParams& ref = live.front()->params;
  for (const auto* u : live) {
    if (u->params.layers.size() != ref.layers.size()) {
      throw InvalidArgument("client " + std::to_string(u->client_id) + " has a different layer count");
    }
    for (std::size_t l = 0; l < ref.layers.size(); ++l) {
      const Layer& a = ref.layers[l];
      const Layer& b = u->params.layers[l];
      if (a.name != b.name || a.weight.rows != b.weight.rows || a.weight.cols != b.weight.cols ||
          a.bias.size() != b.bias.size()) {
        throw InvalidArgument("shape mismatch in layer '" + a.name + "' from client " +
                              std::to_string(u->client_id));
      }
    }
  }

  ModelParams out = ref;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto combine = [&](std::vector<double>& dst, auto member) {
      for (std::size_t e = 0; e < dst.size(); ++e) {
        double acc = 0.0;
        for (std::size_t i = 0; i < live.size(); ++i) acc += lambdas[i] * member(*live[i])[e];
        dst[e] = acc;
      }
    };
    combine(out.layers[l].weight.data,
            [l](const ClientUpdateMsg& u) -> const std::vector<double>& { return u.params.layers[l].weight.data; });
    combine(out.layers[l].bias,
            [l](const ClientUpdateMsg& u) -> const std::vector<double>& { return u.params.layers[l].bias; });
  }
  return out;
}

ServerState run_federation(std::span<const ClientData> clients, const ModelParams& init,
                           const RoundConfig& config) {
  if (clients.empty()) throw InvalidArgument("empty client pool");
  if (config.n_rounds < 0) throw InvalidArgument("n_rounds must be >= 0");

  std::vector<int> ids;
  double sigma_max = 0.0;
  for (const auto& c : clients) {
    ids.push_back(c.client_id);
    sigma_max = std::max(sigma_max, c.sigma);
  }

  ServerState state;
  state.global_params = init;
  for (int round = 1; round <= config.n_rounds; ++round) {
    const std::vector<int> selected = select_clients(ids, config.client_fraction, config.seed, round);
    std::vector<const ClientData*> chosen;
    for (int id : selected) {
      const auto it = std::find_if(clients.begin(), clients.end(),
                                   [id](const ClientData& c) { return c.client_id == id; });
      chosen.push_back(&*it);
    }

    std::vector<ClientUpdateMsg> updates(chosen.size());
    parallel_for(chosen.size(), config.threads, [&](std::size_t i) {
      const ClientData& c = *chosen[i];
      const double q = compute_quality(c.sigma, config.quality_map, sigma_max, config.quality_epsilon);
      const std::uint64_t seed =
          derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(round)),
                      static_cast<std::uint64_t>(c.client_id));
      ClientUpdateMsg msg = client_update(c, state.global_params, config.local_steps, round, q, seed,
                                          config.lr);
      if (config.serialize_transport) msg = decode_update(encode_update(msg));
      updates[i] = std::move(msg);
    });

    RoundLog log;
    log.round_id = round;
    double loss_sum = 0.0;
    for (const auto& u : updates) {
      if (u.failed) {
        log.failed.push_back(u.client_id);
      } else {
        log.participants.push_back(u.client_id);
        loss_sum += u.mean_loss;
      }
    }
    if (!log.participants.empty()) {
      log.lambdas = aggregation_weights(updates, config.aggregation, config.weight_by_samples);
      log.mean_client_loss = loss_sum / static_cast<double>(log.participants.size());
      state.global_params = aggregate(updates, config.aggregation, config.weight_by_samples);
    }
    // A round where every client failed keeps the previous global model.
    state.round = round;
    state.history.push_back(std::move(log));
  }
  return state;
}

void write_history_jsonl(std::span<const RoundLog> history, std::ostream& out) {
  for (const RoundLog& r : history) {
    nlohmann::json j = {
        {"round_id", r.round_id},
        {"participants", r.participants},
        {"lambda", r.lambdas},
        {"mean_client_loss", r.mean_client_loss},
        {"failed", r.failed},
    };
    out << j.dump() << '\n';
  }
}

const char* to_string(AggregationPolicy p) {
  return p == AggregationPolicy::FedAvg ? "fedavg" : "fedweight";
}

const char* to_string(QualityMap m) {
  switch (m) {
    case QualityMap::InverseNoise:
      return "inverse";
    case QualityMap::MaxMinus:
      return "maxminus";
    case QualityMap::Literal:
      return "literal";
  }
  return "?";
}

AggregationPolicy parse_policy(const std::string& s) {
  if (s == "fedavg") return AggregationPolicy::FedAvg;
  if (s == "fedweight") return AggregationPolicy::FedWeight;
  throw InvalidArgument("unknown policy '" + s + "' (expected fedavg or fedweight)");
}

QualityMap parse_quality_map(const std::string& s) {
  if (s == "inverse") return QualityMap::InverseNoise;
  if (s == "maxminus") return QualityMap::MaxMinus;
  if (s == "literal") return QualityMap::Literal;
  throw InvalidArgument("unknown quality map '" + s + "' (expected inverse, maxminus or literal)");
}

}  // namespace fedweight
