#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rfinfer/simulation.hpp"

namespace rfinfer {

// Keys mirror ScenarioConfig field names; every key is optional and unknown
// keys are rejected by name.
ScenarioConfig scenario_from_json(const nlohmann::json& j);

ScenarioConfig load_scenario_config(const std::string& path);

nlohmann::ordered_json scenario_to_json(const ScenarioConfig& config);

// Tidy CSV, one row per (scenario, test):
// model,N,p,beta,tau,error,test,alpha,rejection_rate,mc_se,n_reps,seed
void write_rates_csv(const std::string& path,
                     const std::vector<ScenarioResult>& results);

// CSV with the smallest grid N reaching `target` power per test
// ("not reached" when the curve never gets there).
void write_power_summary(const std::string& path, const PowerCurve& curve,
                         double target);

// Shortest decimal that round-trips; used for all numeric file output.
std::string format_double(double value);

}  // namespace rfinfer
