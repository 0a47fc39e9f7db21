#include "trajforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include <zlib.h>

#include "trajforge/error.hpp"
#include "trajforge/io.hpp"

namespace trajforge {

namespace {

constexpr char kMagic[4] = {'G', 'L', 'M', 'A'};
constexpr std::string_view kLoraPrefix = "lora/";
constexpr std::size_t kPreamble = 4 + 4 + 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::TruncatedFile, "checkpoint payload ends early");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_store(std::string& out, const TensorStore<float>& store, std::string_view prefix) {
  for (std::size_t i = 0; i < store.entries().size(); ++i) {
    const auto& e = store.entry(i);
    const std::string name = std::string(prefix) + e.name;
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(e.rows));
    put_u32(out, static_cast<std::uint32_t>(e.cols));
    for (float v : store[i]) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << v;
  return ss.str();
}

}  // namespace

Vocabulary Checkpoint::vocabulary() const {
  Vocabulary v(grid, timespec);
  if (v.content_hash() != vocab_hash)
    throw Error(ErrorCode::InvalidConfig, "checkpoint vocabulary hash does not match its grid/timespec");
  return v;
}

std::string save_checkpoint(const Model<float>& model, const LoraAdapter<float>* adapter, const Vocabulary& vocab,
                            const nlohmann::json& train, const nlohmann::json& extra) {
  const nlohmann::json header = {
      {"model", model.config.to_json()},
      {"lora", adapter ? adapter->config.to_json() : nlohmann::json(nullptr)},
      {"train", train},
      {"vocabulary",
       {{"size", vocab.size()},
        {"hash", hex64(vocab.content_hash())},
        {"grid", to_json(vocab.grid())},
        {"timespec", to_json(vocab.timespec())}}},
      {"extra", extra},
  };
  const std::string header_text = header.dump();

  std::string payload;
  put_u32(payload, static_cast<std::uint32_t>(header_text.size()));
  payload += header_text;
  const std::size_t count = model.weights.entries().size() + (adapter ? adapter->weights.entries().size() : 0);
  put_u32(payload, static_cast<std::uint32_t>(count));
  put_store(payload, model.weights, "");
  if (adapter) put_store(payload, adapter->weights, kLoraPrefix);

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, payload.size());
  out += payload;
  put_u32(out, crc32_of(payload));
  return out;
}

Checkpoint load_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, "checkpoint shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "not a GLMA checkpoint");
  if (bytes.size() < kPreamble) throw Error(ErrorCode::TruncatedFile, "checkpoint preamble incomplete");
  Reader pre(bytes.substr(4, kPreamble - 4));
  const auto version = pre.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                std::to_string(kCheckpointVersion));
  const auto payload_len = pre.u64();
  if (bytes.size() - kPreamble < 4 || payload_len > bytes.size() - kPreamble - 4)
    throw Error(ErrorCode::TruncatedFile, "checkpoint shorter than its declared payload");
  const auto payload = bytes.substr(kPreamble, payload_len);
  Reader trailer(bytes.substr(kPreamble + payload_len));
  if (trailer.u32() != crc32_of(payload)) throw Error(ErrorCode::ChecksumMismatch, "checkpoint CRC-32 mismatch");
  if (!trailer.done()) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes after checkpoint CRC");

  Reader r(payload);
  const auto header_len = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.model.config = ModelConfig::from_json(header.at("model"));
    if (!header.at("lora").is_null()) ck.adapter = LoraAdapter<float>{LoraConfig::from_json(header.at("lora")), {}};
    const auto& vj = header.at("vocabulary");
    ck.grid = grid_from_json(vj.at("grid"));
    ck.timespec = timespec_from_json(vj.at("timespec"));
    ck.vocab_hash = std::stoull(vj.at("hash").get<std::string>(), nullptr, 16);
    ck.train = header.value("train", nlohmann::json(nullptr));
    ck.extra = header.value("extra", nlohmann::json(nullptr));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("checkpoint header: ") + e.what());
  }

  const auto count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name(r.take(r.u32()));
    const auto rows = r.u32();
    const auto cols = r.u32();
    const bool lora = name.starts_with(kLoraPrefix);
    if (lora && !ck.adapter) throw Error(ErrorCode::InvalidConfig, "adapter tensor without a LoRA config");
    auto& store = lora ? ck.adapter->weights : ck.model.weights;
    const auto idx = store.add(lora ? name.substr(kLoraPrefix.size()) : name, rows, cols);
    for (auto& v : store[idx]) v = std::bit_cast<float>(r.u32());
  }
  if (!r.done()) throw Error(ErrorCode::InvalidConfig, "unexpected bytes after the last tensor");
  // validates shapes and names against the config
  const Transformer<float> check(ck.model, ck.adapter ? &*ck.adapter : nullptr);
  return ck;
}

void save_checkpoint_file(const std::filesystem::path& path, const Model<float>& model,
                          const LoraAdapter<float>* adapter, const Vocabulary& vocab, const nlohmann::json& train,
                          const nlohmann::json& extra) {
  write_text_file(path, save_checkpoint(model, adapter, vocab, train, extra));
}

Checkpoint load_checkpoint_file(const std::filesystem::path& path) { return load_checkpoint(read_text_file(path)); }

}  // namespace trajforge
