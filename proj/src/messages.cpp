#include "fedsched/messages.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fedsched {

namespace {

template <class... Ts> struct Overload : Ts... { using Ts::operator()...; };
template <class... Ts> Overload(Ts...) -> Overload<Ts...>;

nlohmann::json vec_summary(const Vec& v) {
  return {{"len", v.size()}, {"norm2", v.norm()}};
}

} // namespace

const char* message_kind(const FedMessage& msg) {
  return std::visit(Overload{
                        [](const ModelBroadcast&) { return "model_broadcast"; },
                        [](const ClientSummary&) { return "client_summary"; },
                        [](const MultiplierDeltaNorm&) { return "multiplier_delta"; },
                        [](const GainBit&) { return "gain_bit"; },
                        [](const GmmStats&) { return "gmm_stats"; },
                        [](const ClientReport&) { return "client_report"; },
                    },
                    msg);
}

std::vector<std::string> message_field_names(const std::string& kind) {
  if (kind == "model_broadcast") return {"phi", "outer_round", "inner_iter"};
  if (kind == "client_summary") return {"client_id", "u_shift", "eps_residual"};
  if (kind == "multiplier_delta") return {"client_id", "delta_inf"};
  if (kind == "gain_bit") return {"client_id", "slot", "bit"};
  if (kind == "gmm_stats")
    return {"client_id", "count",   "resp_count", "resp_sum",
            "resp_sumsq", "loglik", "min_value",  "max_value"};
  if (kind == "client_report") return {"client_id", "kind", "value"};
  throw std::invalid_argument("unknown message kind: " + kind);
}

void write_message_jsonl(const std::string& path, const MessageLog& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& msg : log.records) {
    nlohmann::json j;
    j["kind"] = message_kind(msg);
    std::visit(Overload{
                   [&](const ModelBroadcast& m) {
                     j["phi"] = vec_summary(m.phi);
                     j["outer_round"] = m.outer_round;
                     j["inner_iter"] = m.inner_iter;
                   },
                   [&](const ClientSummary& m) {
                     j["client_id"] = m.client_id;
                     j["u_shift"] = vec_summary(m.u_shift);
                     j["eps_residual"] = m.eps_residual;
                   },
                   [&](const MultiplierDeltaNorm& m) {
                     j["client_id"] = m.client_id;
                     j["delta_inf"] = m.delta_inf;
                   },
                   [&](const GainBit& m) {
                     j["client_id"] = m.client_id;
                     j["slot"] = m.slot;
                     j["bit"] = m.bit;
                   },
                   [&](const GmmStats& m) {
                     j["client_id"] = m.client_id;
                     j["count"] = m.count;
                     j["resp_count"] = vec_summary(m.resp_count);
                     j["resp_sum"] = vec_summary(m.resp_sum);
                     j["resp_sumsq"] = vec_summary(m.resp_sumsq);
                     j["loglik"] = m.loglik;
                     j["min_value"] = m.min_value;
                     j["max_value"] = m.max_value;
                   },
                   [&](const ClientReport& m) {
                     j["client_id"] = m.client_id;
                     j["report"] = m.kind;
                     j["value"] = m.value;
                   },
               },
               msg);
    f << j.dump() << '\n';
  }
}

} // namespace fedsched
