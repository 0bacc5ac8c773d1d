#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gilbo/diagnostics.hpp"
#include "gilbo/estimator.hpp"
#include "gilbo/generators.hpp"

namespace gilbo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitDiverged = 2;

struct ZooEntry {
    std::string name;
    std::string description;
};

// Named generators available as {"zoo": "<name>"} in a run config.
std::vector<ZooEntry> zoo_entries();
Generator zoo_generator(const std::string& name);

struct ConsistencyConfig {
    int n_samples = 0;  // 0 disables consistency_tuples.csv
    int n_resamples = 4;
};

struct DiagnosticsConfig {
    SbcConfig sbc;
    int repro_k = 8;
    int tight_n = 64;
    InversionConfig inversion;
    ConsistencyConfig consistency;
};

struct ZooTrainConfig {
    VaeConfig vae;
    std::size_t dataset_size = 4096;
    std::string out_file = "vae_generator.json";  // relative to the output directory
};

struct RunConfig {
    std::optional<Generator> generator;
    GilboConfig estimator;
    DiagnosticsConfig diagnostics;
    Signposts signposts;
    std::optional<std::string> output_dir;
    std::uint64_t seed = 0;
    int workers = 0;  // 0 = available cores
    ZooTrainConfig zoo;

    // Copies seed into every component that draws random numbers.
    void apply_seed(std::uint64_t s);
    const Generator& require_generator() const;
};

// Parses a run config; every object rejects unknown keys. Relative generator
// file paths resolve against base_dir.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct CommandContext {
    std::filesystem::path out_dir;
    std::ostream& out;
    std::ostream& err;
};

int cmd_estimate(const RunConfig& cfg, const CommandContext& ctx);
int cmd_sbc(const RunConfig& cfg, const CommandContext& ctx);
int cmd_repro(const RunConfig& cfg, const CommandContext& ctx);
int cmd_tight(const RunConfig& cfg, const CommandContext& ctx);
int cmd_oracle(const RunConfig& cfg, const CommandContext& ctx);
int cmd_zoo_list(const CommandContext& ctx);
int cmd_zoo_train(const RunConfig& cfg, const CommandContext& ctx);

// Full command line: gilbo <estimate|sbc|repro|tight|oracle|zoo list|zoo train>
// --config PATH [--out DIR] [--seed U64]. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace gilbo
