#pragma once

#include "tfcmnn/model.hpp"
#include "tfcmnn/training.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <string>

namespace tfcmnn {

// Shortest round-trip decimal form; "nan" for missing scores.
inline std::string format_number(double v)
{
    if ( std::isnan(v) )
        return "nan";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

// `epoch,lr,train_loss,dev_score,eval_score,seconds`. Wall-clock seconds make
// the file run-dependent, so they are written as 0 unless requested.
inline std::string report_csv(const TrainingReport& rep, bool wall_clock = false)
{
    std::string out = "epoch,lr,train_loss,dev_score,eval_score,seconds\n";
    for ( const auto& e : rep.epochs )
    {
        out += std::to_string(e.epoch) + ',' + format_number(e.lr) + ',' + format_number(e.train_loss) + ',' +
               format_number(e.dev_score) + ',' + format_number(e.eval_score) + ',' +
               format_number(wall_clock ? e.seconds : 0.0) + '\n';
    }
    return out;
}

inline nlohmann::json json_score(double v)
{
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
}

// Summary with the columns of a results table row. Training time is 0
// unless `wall_clock`, for the same reason as in report_csv.
inline nlohmann::json report_summary(const TrainingReport& rep, const Model& model, bool wall_clock = false)
{
    nlohmann::json j;
    j["method"]    = model.kind == ModelKind::tfcmnn ? "TFCMNN" : "1D-CMNN";
    j["model"]     = model_kind_name(model.kind);
    j["structure"] = model.spec.canonical();
    j["weight_sharing"] = model.kind == ModelKind::tfcmnn      ? "Time+Frequency"
                          : model.kind == ModelKind::cmnn_time ? "Time"
                                                               : "Frequency";
    j["dropout"]   = model.spec.dropout ? nlohmann::json(*model.spec.dropout) : nlohmann::json(nullptr);
    j["pieces"]    = model.spec.pieces;
    j["width"]     = model.spec.width;
    j["seed"]      = model.seed;
    j["parameters"] = param_count(model).total;
    j["epochs"]    = rep.epochs_run;
    j["training_time_hours"] = wall_clock ? rep.total_hours() : 0.0;
    j["dev_score"]  = json_score(rep.final_dev());
    j["eval_score"] = json_score(rep.final_eval());
    j["halvings"]   = rep.halvings;
    j["final_lr"]   = rep.final_lr;
    j["stopped_by_schedule"] = rep.stopped_by_schedule;
    j["aborted"]    = rep.aborted;
    if ( rep.aborted )
        j["abort_reason"] = rep.abort_reason;
    return j;
}

} // namespace tfcmnn
