#pragma once

// Flat "key = value" config text: ordered serialization, tolerant parsing,
// and converters for the model/PE/training structs. Doubles print in their
// shortest round-trip-exact form so serialize -> parse -> serialize is
// byte-stable and parse -> serialize recovers the value bit-exactly.

#include <string>
#include <utility>
#include <vector>

#include "adgen/model.hpp"
#include "adgen/trainer.hpp"

namespace adgen {

using KVList = std::vector<std::pair<std::string, std::string>>;

std::string serialize_kv(const KVList& kv);
// Parses "key = value" lines; blank lines and '#' comments are skipped.
// Throws ValueError on a line without '='.
KVList parse_kv(const std::string& text);

std::string format_double(double v);  // shortest round-trip-exact form
double parse_double(const std::string& s);
long long parse_int(const std::string& s);
bool parse_bool(const std::string& s);

// Struct <-> key list. Keys are "model.*", "pe.*", "train.*"; serializers
// emit every field, parsers accept any subset (missing fields keep defaults)
// and reject unknown keys in their own section.
KVList model_config_kv(const ModelConfig& cfg);
void apply_model_kv(const KVList& kv, ModelConfig* cfg);  // consumes model./pe. keys
KVList train_config_kv(const TrainConfig& cfg);
void apply_train_kv(const KVList& kv, TrainConfig* cfg);  // consumes train. keys

// Full round-trip helpers used by checkpoints: both structs in one block.
std::string configs_to_text(const ModelConfig& m, const TrainConfig& t);
void configs_from_text(const std::string& text, ModelConfig* m, TrainConfig* t);

}  // namespace adgen
