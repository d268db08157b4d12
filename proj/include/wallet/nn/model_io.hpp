#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "wallet/nn/ffnn.hpp"
#include "wallet/nn/lstm_net.hpp"

namespace wallet::nn {

/// Model files are one JSON document: a header (schema version, shapes,
/// activation names, a reference to the normalization statistics) plus
/// base64 blobs of row-major little-endian float64 weights. The layout is
/// documented in docs/model-format.md.
inline constexpr int kModelSchemaVersion = 1;

struct ModelHeader {
  std::string norm_file = "norm.json";
  std::string norm_fingerprint;
  nlohmann::json extra = nlohmann::json::object();
};

std::string encode_matrix(const Matrix<double>& m);
Matrix<double> decode_matrix(const std::string& blob, Index rows, Index cols);

nlohmann::json to_json(const Ffnn<double>& net, const ModelHeader& header);
nlohmann::json to_json(const LstmNet<double>& net, const ModelHeader& header);

Ffnn<double> ffnn_from_json(const nlohmann::json& doc, ModelHeader* header = nullptr);
LstmNet<double> lstm_from_json(const nlohmann::json& doc, ModelHeader* header = nullptr);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace wallet::nn
