#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedweight/model.hpp"
#include "fedweight/synth.hpp"

namespace fedweight {

enum class AggregationPolicy { FedAvg, FedWeight };

/// How a client's noise level becomes its raw quality score.
enum class QualityMap {
  InverseNoise,  // 1 / (sigma + eps)
  MaxMinus,      // sigma_max - sigma + eps
  Literal,       // sigma
};

inline constexpr double kQualityEpsilon = 0.05;

double compute_quality(double sigma_s, QualityMap map, double sigma_max = 0.0,
                       double eps = kQualityEpsilon);

/// Raw scores scaled to sum to one. Equal scores (including all zero) give
/// exactly 1/n each.
std::vector<double> normalize_qualities(std::span<const double> raw);

/// Everything a simulated device keeps locally.
struct ClientData {
  int client_id = 0;
  /// Noise level reported to the server for quality weighting.
  double sigma = 0.0;
  std::vector<TrainingWindow> windows;
};

ClientData make_client_data(const SubjectRecord& record, double sigma, int window = kDefaultWindow);

struct ClientUpdateMsg {
  int round_id = 0;
  int client_id = 0;
  ModelParams params;
  double quality_raw = 0.0;
  std::int64_t n_samples = 0;
  double mean_loss = 0.0;
  bool failed = false;

  bool operator==(const ClientUpdateMsg&) const = default;
};

/// Message wire format: "FWUP" | u32 version | i64 round | i64 client |
/// f64 quality_raw | i64 n_samples | f64 mean_loss | u32 failed | params
/// (as in the checkpoint body).
std::vector<std::uint8_t> encode_update(const ClientUpdateMsg& msg);
ClientUpdateMsg decode_update(std::span<const std::uint8_t> bytes);

struct RoundConfig {
  int n_rounds = 7;
  double client_fraction = 1.0;
  /// Adam steps per round; negative means one pass over the client's windows.
  int local_steps = -1;
  AggregationPolicy aggregation = AggregationPolicy::FedWeight;
  QualityMap quality_map = QualityMap::InverseNoise;
  double quality_epsilon = kQualityEpsilon;
  /// Multiply each client's weight by its window count.
  bool weight_by_samples = false;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Route every client message through encode/decode.
  bool serialize_transport = false;
  /// Worker threads for client training; 0 picks the hardware concurrency.
  int threads = 0;
};

struct RoundLog {
  int round_id = 0;
  std::vector<int> participants;
  std::vector<double> lambdas;
  double mean_client_loss = 0.0;
  std::vector<int> failed;
};

struct ServerState {
  ModelParams global_params;
  int round = 0;
  std::vector<RoundLog> history;
};

/// ceil(fraction * N) distinct clients, returned in ascending id order.
std::vector<int> select_clients(std::span<const int> all_clients, double fraction,
                                std::uint64_t seed, int round);

/// Local training from a copy of `global_params` with a fresh optimizer.
/// Window order is shuffled with `seed`. A numerical overflow yields a
/// message with failed = true instead of throwing.
ClientUpdateMsg client_update(const ClientData& client, const ModelParams& global_params,
                              int local_steps, int round_id, double quality_raw,
                              std::uint64_t seed, double lr = 1e-3);

/// Convex weights for the non-failed updates, in ascending client_id order.
std::vector<double> aggregation_weights(std::span<const ClientUpdateMsg> updates,
                                        AggregationPolicy policy, bool weight_by_samples = false);

/// Per-tensor weighted sum of client parameters. Failed updates are ignored;
/// summation runs in ascending client_id order.
ModelParams aggregate(std::span<const ClientUpdateMsg> updates, AggregationPolicy policy,
                      bool weight_by_samples = false);

ServerState run_federation(std::span<const ClientData> clients, const ModelParams& init,
                           const RoundConfig& config);

/// One JSON object per round: round_id, participants, lambda,
/// mean_client_loss, failed.
void write_history_jsonl(std::span<const RoundLog> history, std::ostream& out);

const char* to_string(AggregationPolicy p);
const char* to_string(QualityMap m);
AggregationPolicy parse_policy(const std::string& s);
QualityMap parse_quality_map(const std::string& s);

}  // namespace fedweight
