#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fedsched/types.hpp"

namespace fedsched {

// Every byte exchanged between the coordinator and a client is one of the
// message types below.  Client constraint data, gains, demands and budgets
// never appear here; only iterates, aggregate norms, and scalar reports do.

// Coordinator -> clients: current shared iterate.
struct ModelBroadcast {
  Vec phi;
  int outer_round = 0;
  int inner_iter = 0;
};

// Client -> coordinator: shifted local iterate plus inexactness certificate.
struct ClientSummary {
  int client_id = 0;
  Vec u_shift; // u + lambda / rho, the only per-client vector the server needs
  double eps_residual = 0;
};

// Client -> coordinator: sup-norm of the local multiplier update.
struct MultiplierDeltaNorm {
  int client_id = 0;
  double delta_inf = 0;
};

// Client -> coordinator: one thresholded link-quality bit.
struct GainBit {
  int client_id = 0;
  int slot = 0;
  bool bit = false;
};

// Client -> coordinator: sufficient statistics for one mixture-fit round.
// For the init round the responsibilities are all-ones, and min/max carry the
// client's value range; EM rounds fill per-component aggregates.
struct GmmStats {
  int client_id = 0;
  double count = 0;
  Vec resp_count;  // per component: sum of responsibilities
  Vec resp_sum;    // per component: sum of responsibility-weighted values
  Vec resp_sumsq;  // per component: sum of responsibility-weighted squares
  double loglik = 0;
  double min_value = 0;
  double max_value = 0;
};

// Client -> coordinator: one named scalar (served fraction, deficit, boost
// magnitude).  The pipeline stages above the solver use these instead of
// touching client data directly.
struct ClientReport {
  int client_id = 0;
  std::string kind;
  double value = 0;
};

using FedMessage = std::variant<ModelBroadcast, ClientSummary, MultiplierDeltaNorm,
                                GainBit, GmmStats, ClientReport>;

// Optional tap recording every boundary crossing, for audits and tests.
struct MessageLog {
  bool enabled = false;
  std::vector<FedMessage> records;

  void record(const FedMessage& msg) {
    if (enabled) records.push_back(msg);
  }
  void record(FedMessage&& msg) {
    if (enabled) records.push_back(std::move(msg));
  }
};

inline MessageLog* tap_or_null(MessageLog* tap) { return tap && tap->enabled ? tap : nullptr; }

const char* message_kind(const FedMessage& msg);

// Field names per message kind, for the structural audit: anything not listed
// here cannot cross the boundary.
std::vector<std::string> message_field_names(const std::string& kind);

// One JSON object per line; vectors are summarized as length plus norm so the
// audit file stays small.
void write_message_jsonl(const std::string& path, const MessageLog& log);

} // namespace fedsched
