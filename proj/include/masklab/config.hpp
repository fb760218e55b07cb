#pragma once

// Run configuration as strict JSON: unknown keys are rejected, every field
// has a default, and serialize() emits every field so parse/serialize
// round-trips exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "masklab/mdp.hpp"
#include "masklab/theory_suite.hpp"
#include "masklab/training.hpp"

namespace masklab {

struct RunConfig {
  std::string command = "train";  // verify-theory | train | eval | sweep | report
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
  TrainConfig train;
  TheoryBatteryConfig theory;

  void validate() const;
};

// Throws InputError on malformed JSON, unknown keys or wrong types.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string serialize(const RunConfig& config);

// FNV-1a over the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& config);

// MASKLAB_OUTPUT_ROOT, when set, replaces the root of relative output paths.
std::string resolve_output_dir(const std::string& configured);

// A finite MDP with per-state validity, read from JSON:
// {"num_states", "num_actions", "discount", "initial": [...],
//  "transitions": [[s, a, s', p], ...], "rewards": [[s, a, r], ...],
//  "masks": [[0/1, ...], ...]}. Missing (s, a) transitions are self-loops.
struct MdpFile {
  TabularMdp mdp;
  std::vector<ValidityMask> masks;
};

MdpFile parse_mdp(const std::string& json_text);
MdpFile load_mdp(const std::string& path);

std::string read_text_file(const std::string& path);

}  // namespace masklab
