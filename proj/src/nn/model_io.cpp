#include "wallet/nn/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wallet/base64.hpp"

namespace wallet::nn {
namespace {

using nlohmann::json;

json dense_to_json(const DenseLayer<double>& l) {
  return {{"type", "dense"},
          {"inputs", l.inputs()},
          {"outputs", l.outputs()},
          {"activation", activation_name(l.activation)},
          {"W", encode_matrix(l.W)},
          {"b", encode_matrix(l.b)}};
}

DenseLayer<double> dense_from_json(const json& j) {
  if (j.at("type") != "dense") throw Error(Errc::validation_error, "layer type");
  const Index in = j.at("inputs").get<Index>();
  const Index out = j.at("outputs").get<Index>();
  DenseLayer<double> l;
  l.W = decode_matrix(j.at("W").get<std::string>(), out, in);
  l.b = decode_matrix(j.at("b").get<std::string>(), out, 1);
  l.activation = parse_activation(j.at("activation").get<std::string>());
  return l;
}

json header_json(const char* kind, const ModelHeader& h) {
  return {{"format", "wallet-model"},
          {"schema_version", kModelSchemaVersion},
          {"kind", kind},
          {"scalar", "float64"},
          {"byte_order", "little"},
          {"layout", "row-major"},
          {"norm", {{"file", h.norm_file}, {"fingerprint", h.norm_fingerprint}}},
          {"extra", h.extra}};
}

void read_header(const json& doc, const char* kind, ModelHeader* h) {
  if (doc.value("format", "") != "wallet-model" || doc.value("kind", "") != kind)
    throw Error(Errc::validation_error, std::string("not a ") + kind + " model file");
  if (doc.value("schema_version", 0) != kModelSchemaVersion)
    throw Error(Errc::validation_error, "unsupported model schema version");
  if (h) {
    h->norm_file = doc.at("norm").value("file", "");
    h->norm_fingerprint = doc.at("norm").value("fingerprint", "");
    h->extra = doc.value("extra", json::object());
  }
}

}  // namespace

std::string encode_matrix(const Matrix<double>& m) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * 8);
  std::size_t k = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      auto bits = std::bit_cast<std::uint64_t>(m(r, c));
      for (int b = 0; b < 8; ++b) bytes[k++] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  return base64_encode(bytes);
}

Matrix<double> decode_matrix(const std::string& blob, Index rows, Index cols) {
  auto bytes = base64_decode(blob);
  if (rows < 0 || cols < 0 || bytes.size() != static_cast<std::size_t>(rows * cols) * 8)
    throw Error(Errc::shape_mismatch, "weight blob size");
  Matrix<double> m(rows, cols);
  std::size_t k = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[k++]) << (8 * b);
      m(r, c) = std::bit_cast<double>(bits);
    }
  return m;
}

json to_json(const Ffnn<double>& net, const ModelHeader& header) {
  json doc = header_json("ffnn", header);
  doc["layers"] = json::array();
  for (const auto& l : net.layers) doc["layers"].push_back(dense_to_json(l));
  return doc;
}

json to_json(const LstmNet<double>& net, const ModelHeader& header) {
  json doc = header_json("lstm", header);
  doc["lstm"] = {{"inputs", net.inputs()},
                 {"hidden", net.hidden()},
                 {"gate_order", {"input", "forget", "output", "candidate"}},
                 {"W", encode_matrix(net.cell.W)},
                 {"U", encode_matrix(net.cell.U)},
                 {"b", encode_matrix(net.cell.b)}};
  doc["layers"] = json::array();
  for (const auto& l : net.head) doc["layers"].push_back(dense_to_json(l));
  return doc;
}

Ffnn<double> ffnn_from_json(const json& doc, ModelHeader* header) {
  try {
    read_header(doc, "ffnn", header);
    Ffnn<double> net;
    for (const auto& l : doc.at("layers")) net.layers.push_back(dense_from_json(l));
    for (std::size_t k = 1; k < net.layers.size(); ++k)
      if (net.layers[k].inputs() != net.layers[k - 1].outputs()) throw Error(Errc::shape_mismatch, "layer chain");
    return net;
  } catch (const json::exception& e) {
    throw Error(Errc::validation_error, e.what());
  }
}

LstmNet<double> lstm_from_json(const json& doc, ModelHeader* header) {
  try {
    read_header(doc, "lstm", header);
    const auto& j = doc.at("lstm");
    const Index D = j.at("inputs").get<Index>();
    const Index H = j.at("hidden").get<Index>();
    LstmNet<double> net;
    net.cell.W = decode_matrix(j.at("W").get<std::string>(), 4 * H, D);
    net.cell.U = decode_matrix(j.at("U").get<std::string>(), 4 * H, H);
    net.cell.b = decode_matrix(j.at("b").get<std::string>(), 4 * H, 1);
    for (const auto& l : doc.at("layers")) net.head.push_back(dense_from_json(l));
    Index prev = H;
    for (const auto& l : net.head) {
      if (l.inputs() != prev) throw Error(Errc::shape_mismatch, "head chain");
      prev = l.outputs();
    }
    return net;
  } catch (const json::exception& e) {
    throw Error(Errc::validation_error, e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(Errc::io_failure, path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::not_found, path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_json, path.string() + ": " + e.what());
  }
}

}  // namespace wallet::nn
