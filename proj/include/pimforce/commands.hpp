#pragma once

// The end-to-end operations behind the command line tool and the Python
// module. Options mirror the CLI flags; a set flag overrides the same key in
// the JSON config file, which overrides the defaults.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pimforce/eval.hpp"
#include "pimforce/nn/train.hpp"
#include "pimforce/pipeline.hpp"
#include "pimforce/synthgen.hpp"

namespace pimforce::commands {

// Empty path: an empty object. Throws InvalidInput on unreadable or bad JSON.
nlohmann::json read_config(const std::string& path);

struct SynthOptions {
    std::string config, out;
    std::vector<std::string> postures;
    std::optional<std::uint64_t> seed;
    std::optional<double> duration;
};

// Writes the session and the effective synth.json to `out`.
synthgen::SynthConfig synth(const SynthOptions& o, std::ostream* log = nullptr);

struct PreprocessOptions {
    std::string config, in, out;
    bool materialize = false;
    std::optional<std::size_t> stride;
    std::string scaler_from;  // dataset directory whose scaler is reused
};

// Returns the number of aligned samples written.
std::size_t preprocess(const PreprocessOptions& o, std::ostream* log = nullptr);

struct TrainOptions {
    std::string config, model, data, out, preset;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
};

// Trains and writes a checkpoint whose metadata carries the effective
// configs, loss history, scaler and seed. Per-epoch lines go to `log`.
nn::TrainResult train(const TrainOptions& o, std::ostream* log = nullptr);

struct EvalOptions {
    std::string data, ckpt, out;
    bool teacher_forced = false;  // score the ground truth against itself
};

eval::EvalReport evaluate(const EvalOptions& o);

struct InferOptions {
    std::string ckpt, emg, pose, out, config;
    bool canonical = false, detector = false;
};

// Reads the sEMG CSV and the pose CSV or JSON, writes the prediction CSV.
pipeline::Inference infer(const InferOptions& o, std::ostream* log = nullptr);

}  // namespace pimforce::commands
