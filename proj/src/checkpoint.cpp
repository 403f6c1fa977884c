#include <cmath>
#include <fstream>

#include "birq/binary_io.hpp"
#include "birq/trainer.hpp"

namespace birq::trainer {
namespace {

constexpr std::string_view kCkptMagic = "BIRQCKPT";
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::string_view kOptPrefix = "opt.";

StoredTensor store(const std::string& name, const Matrix& m) {
  StoredTensor t{name, {m.rows(), m.cols()}, {}};
  t.values.reserve(m.size());
  for (double v : m.values()) t.values.push_back(static_cast<float>(v));
  return t;
}

void restore(const StoredTensor& t, Matrix& into) {
  const bool ok = t.dims.size() == 2 && t.dims[0] == into.rows() && t.dims[1] == into.cols();
  if (!ok) throw ShapeError("checkpoint tensor " + t.name + " has a shape that does not match the model");
  for (std::size_t j = 0; j < into.size(); ++j) into.data()[j] = static_cast<double>(t.values[j]);
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, std::span<const StoredTensor> tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  io::write_magic(os, kCkptMagic);
  io::write_le<std::uint32_t>(os, kCkptVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw FormatError("tensor name too long: " + t.name);
    if (t.dims.size() > 0xff) throw FormatError("tensor rank too large: " + t.name);
    io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dims.size()));
    std::uint64_t count = 1;
    for (auto d : t.dims) {
      io::write_le<std::uint64_t>(os, d);
      count *= d;
    }
    if (count != t.values.size()) throw ShapeError("tensor payload does not match dims: " + t.name);
    for (float v : t.values) io::write_le<float>(os, v);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<StoredTensor> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  io::expect_magic(is, kCkptMagic);
  if (io::read_le<std::uint32_t>(is, "checkpoint version") != kCkptVersion) {
    throw FormatError("unsupported checkpoint version in " + path.string());
  }
  const auto count = io::read_le<std::uint32_t>(is, "tensor count");
  std::vector<StoredTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto len = io::read_le<std::uint16_t>(is, "name length");
    t.name.resize(len);
    if (!is.read(t.name.data(), len)) throw FormatError("truncated tensor name");
    const auto rank = io::read_le<std::uint8_t>(is, "rank");
    std::uint64_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.dims.push_back(io::read_le<std::uint64_t>(is, "dims"));
      if (t.dims.back() > (1ULL << 32)) throw FormatError("implausible dimension in tensor " + t.name);
      n *= t.dims.back();
    }
    if (n > (1ULL << 31)) throw FormatError("implausible tensor size: " + t.name);
    t.values.resize(n);
    for (float& v : t.values) v = io::read_le<float>(is, "tensor payload");
    out.push_back(std::move(t));
  }
  io::expect_eof(is, "checkpoint");
  return out;
}

void save_checkpoint(const encoder::EncoderParams& params, const OptimizerState& opt,
                     const std::filesystem::path& path) {
  std::vector<StoredTensor> ts;
  for (const auto& t : params.tensors) ts.push_back(store(t.name, t.value));
  for (std::size_t k = 0; k < opt.first.size(); ++k) {
    ts.push_back(store(std::string(kOptPrefix) + "m." + params.tensors[k].name, opt.first[k]));
    ts.push_back(store(std::string(kOptPrefix) + "v." + params.tensors[k].name, opt.second[k]));
  }
  ts.push_back(StoredTensor{std::string(kOptPrefix) + "step", {1}, {static_cast<float>(opt.step)}});
  if (opt.step >= (1ULL << 24)) throw FormatError("step counter exceeds float32 exact range");
  write_tensor_file(path, ts);
}

void load_checkpoint(const std::filesystem::path& path, encoder::EncoderParams& params, OptimizerState& opt) {
  const auto ts = read_tensor_file(path);
  std::size_t i = 0;
  auto next = [&](const std::string& expect) -> const StoredTensor& {
    if (i >= ts.size()) throw FormatError("checkpoint is missing tensor " + expect);
    const auto& t = ts[i++];
    if (t.name != expect) throw FormatError("checkpoint has tensor " + t.name + " where " + expect + " was expected");
    return t;
  };
  for (auto& t : params.tensors) restore(next(t.name), t.value);
  for (std::size_t k = 0; k < opt.first.size(); ++k) {
    restore(next(std::string(kOptPrefix) + "m." + params.tensors[k].name), opt.first[k]);
    restore(next(std::string(kOptPrefix) + "v." + params.tensors[k].name), opt.second[k]);
  }
  const auto& st = next(std::string(kOptPrefix) + "step");
  if (st.values.size() != 1 || st.values[0] < 0.0f || st.values[0] != std::floor(st.values[0])) {
    throw FormatError("checkpoint step counter is malformed");
  }
  opt.step = static_cast<std::uint64_t>(st.values[0]);
  if (i != ts.size()) throw FormatError("checkpoint has unexpected extra tensor " + ts[i].name);
}

}  // namespace birq::trainer
