#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <string>

#include "smartcast/error.hpp"
#include "smartcast/lstm.hpp"

namespace smartcast::lstm {

namespace {

using nlohmann::json;

static_assert(sizeof(double) == 8, "checkpoints store IEEE-754 binary64");

void write_le_double(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) {
    bytes[k] = static_cast<unsigned char>(bits & 0xffU);
    bits >>= 8;
  }
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_le_double(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw DataError("checkpoint: truncated parameter data");
  std::uint64_t bits = 0;
  for (int k = 7; k >= 0; --k) bits = (bits << 8) | bytes[k];
  return std::bit_cast<double>(bits);
}

json architecture_json(const Architecture& a) {
  return {{"input_dim", a.input_dim},       {"encoder_hidden", a.encoder_hidden}, {"decoder_hidden", a.decoder_hidden},
          {"head_hidden", a.head_hidden},   {"horizon", a.horizon},
          {"residual", a.residual}};
}

json config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},   {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"seed", c.seed},                   {"loss", std::string(to_string(c.loss))}};
}

}  // namespace

void write_checkpoint(std::ostream& out, const Seq2SeqModel& model, const TrainConfig* config) {
  const Architecture& arch = model.architecture();
  json header;
  header["format"] = "smartcast-lstm";
  header["version"] = 1;
  header["architecture"] = architecture_json(arch);
  header["horizon"] = arch.horizon;
  header["target_feature"] = model.target_feature();
  header["scaler"] = {{"mean", model.scaler().mean()}, {"stddev", model.scaler().stddev()}};
  header["byte_order"] = "little";
  header["dtype"] = "float64";
  json tensors = json::array();
  model.params().for_each_tensor([&](std::string_view name, std::span<const double> t) {
    tensors.push_back({{"name", std::string(name)}, {"count", t.size()}});
  });
  header["tensors"] = std::move(tensors);
  header["parameter_count"] = model.params().parameter_count();
  if (config != nullptr) header["config"] = config_json(*config);

  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  out << header.dump() << '\n';
  model.params().for_each_tensor([&](std::string_view, std::span<const double> t) {
    for (double v : t) write_le_double(out, v);
  });
  if (!out) throw DataError("checkpoint: write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model, const TrainConfig* config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint '" + path.string() + "' for writing");
  write_checkpoint(out, model, config);
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string magic(kCheckpointMagic.size(), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic, not a SMLSTM1 file");
  }
  std::string line;
  if (!std::getline(in, line)) throw DataError("checkpoint: missing header");

  Checkpoint ckpt;
  try {
    const json header = json::parse(line);
    if (header.at("byte_order") != "little" || header.at("dtype") != "float64") {
      throw DataError("checkpoint: unsupported byte order or dtype");
    }
    const json& a = header.at("architecture");
    const Architecture arch{a.at("input_dim").get<int>(), a.at("encoder_hidden").get<int>(),
                            a.at("decoder_hidden").get<int>(), a.at("head_hidden").get<int>(),
                            a.at("horizon").get<int>(), a.value("residual", false)};
    Seq2SeqModel model(arch);
    model.set_scaler(timeseries::Scaler(header.at("scaler").at("mean").get<std::vector<double>>(),
                                        header.at("scaler").at("stddev").get<std::vector<double>>()));
    model.set_target_feature(header.at("target_feature").get<std::size_t>());
    if (header.at("parameter_count").get<std::size_t>() != model.params().parameter_count()) {
      throw DataError("checkpoint: parameter count does not match architecture");
    }
    const json& tensors = header.at("tensors");
    std::size_t k = 0;
    model.mutable_params().for_each_tensor([&](std::string_view name, std::span<double> t) {
      if (k >= tensors.size() || tensors[k].at("name") != name || tensors[k].at("count").get<std::size_t>() != t.size()) {
        throw DataError("checkpoint: tensor table mismatch at '" + std::string(name) + "'");
      }
      ++k;
      for (double& v : t) v = read_le_double(in);
    });
    if (header.contains("config")) {
      const json& c = header["config"];
      TrainConfig cfg;
      cfg.learning_rate = c.at("learning_rate");
      cfg.adam_beta1 = c.at("adam_beta1");
      cfg.adam_beta2 = c.at("adam_beta2");
      cfg.adam_epsilon = c.at("adam_epsilon");
      cfg.epochs = c.at("epochs");
      cfg.batch_size = c.at("batch_size");
      cfg.seed = c.at("seed");
      cfg.loss = loss_from_string(c.at("loss").get<std::string>());
      ckpt.config = cfg;
    }
    ckpt.model = std::move(model);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace smartcast::lstm
