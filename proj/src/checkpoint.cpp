#include "corrnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace corrnet {
namespace {

void put_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
T byteswap_if_big(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

void write_u32(std::ofstream& f, std::uint32_t v) {
  v = byteswap_if_big(v);
  put_bytes(f, &v, sizeof(v));
}
void write_u64(std::ofstream& f, std::uint64_t v) {
  v = byteswap_if_big(v);
  put_bytes(f, &v, sizeof(v));
}
void write_f64(std::ofstream& f, double d) {
  auto v = byteswap_if_big(std::bit_cast<std::uint64_t>(d));
  put_bytes(f, &v, sizeof(v));
}
void write_f64_span(std::ofstream& f, std::span<const double> s) {
  for (double d : s) write_f64(f, d);
}

class Reader {
 public:
  explicit Reader(const std::string& path) : f_(path, std::ios::binary), path_(path) {
    if (!f_) throw std::runtime_error("checkpoint: cannot open " + path);
  }
  void expect_magic(const char* magic) {
    char got[8];
    read_bytes(got, 8);
    if (std::memcmp(got, magic, 8) != 0) {
      throw std::runtime_error("checkpoint: " + path_ + ": bad magic (expected " +
                               std::string(magic, 8) + ")");
    }
  }
  std::uint32_t u32() {
    std::uint32_t v;
    read_bytes(&v, sizeof(v));
    return byteswap_if_big(v);
  }
  std::uint64_t u64() {
    std::uint64_t v;
    read_bytes(&v, sizeof(v));
    return byteswap_if_big(v);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64_into(std::span<double> out) {
    for (double& d : out) d = f64();
  }
  void check_eof() {
    f_.peek();
    if (!f_.eof()) throw std::runtime_error("checkpoint: " + path_ + ": trailing bytes");
  }

 private:
  void read_bytes(void* p, std::size_t n) {
    f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f_.gcount() != static_cast<std::streamsize>(n)) {
      throw std::runtime_error("checkpoint: " + path_ + ": truncated");
    }
  }
  std::ifstream f_;
  std::string path_;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  return f;
}

}  // namespace

void save_net(const MlpNet& net, const std::string& path) {
  std::ofstream f = open_out(path);
  put_bytes(f, "CORRNET1", 8);
  write_u32(f, static_cast<std::uint32_t>(net.layers().size()));
  write_u32(f, net.spec().residual ? 1u : 0u);
  for (const Layer& l : net.layers()) {
    write_u32(f, static_cast<std::uint32_t>(l.fan_in));
    write_u32(f, static_cast<std::uint32_t>(l.fan_out));
    write_f64_span(f, l.w);
    write_f64_span(f, l.b);
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

MlpNet load_net(const std::string& path) {
  Reader r(path);
  r.expect_magic("CORRNET1");
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0) throw std::runtime_error("checkpoint: " + path + ": zero layers");
  const std::uint32_t residual_flag = r.u32();
  if (residual_flag > 1) throw std::runtime_error("checkpoint: " + path + ": bad residual flag");
  const bool residual = residual_flag == 1;
  std::vector<Layer> layers(n_layers);
  for (Layer& l : layers) {
    l.fan_in = r.u32();
    l.fan_out = r.u32();
    l.w.resize(l.fan_in * l.fan_out);
    l.b.resize(l.fan_out);
    r.f64_into(l.w);
    r.f64_into(l.b);
  }
  r.check_eof();
  MlpSpec spec;
  spec.in_dim = layers.front().fan_in;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) spec.hidden.push_back(layers[i].fan_out);
  spec.out_dim = layers.back().fan_out;
  spec.residual = residual;
  return MlpNet::from_layers(spec, std::move(layers));
}

void save_buffer(const TargetBuffer& buffer, const std::string& path) {
  std::ofstream f = open_out(path);
  put_bytes(f, "CORRBUF1", 8);
  write_u64(f, buffer.embeddings.rows);
  write_u32(f, static_cast<std::uint32_t>(buffer.embeddings.dim));
  write_f64_span(f, buffer.embeddings.data);
  for (std::uint64_t s : buffer.last_refresh_step) write_u64(f, s);
  write_u64(f, buffer.reembed_counter);
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

TargetBuffer load_buffer(const std::string& path) {
  Reader r(path);
  r.expect_magic("CORRBUF1");
  const std::uint64_t rows = r.u64();
  const std::uint32_t dim = r.u32();
  TargetBuffer buf;
  buf.embeddings = EmbeddingMatrix(rows, dim);
  r.f64_into(buf.embeddings.data);
  buf.last_refresh_step.resize(rows);
  for (std::uint64_t& s : buf.last_refresh_step) s = r.u64();
  buf.reembed_counter = r.u64();
  r.check_eof();
  return buf;
}

void save_adam(const AdamState& state, const std::string& path) {
  std::ofstream f = open_out(path);
  put_bytes(f, "CORROPT1", 8);
  write_u64(f, state.step);
  write_f64(f, state.lr);
  write_f64(f, state.beta1);
  write_f64(f, state.beta2);
  write_f64(f, state.eps);
  write_u64(f, state.m.size());
  write_f64_span(f, state.m);
  write_f64_span(f, state.v);
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

AdamState load_adam(const std::string& path) {
  Reader r(path);
  r.expect_magic("CORROPT1");
  AdamState s;
  s.step = r.u64();
  s.lr = r.f64();
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.eps = r.f64();
  const std::uint64_t n = r.u64();
  s.m.resize(n);
  s.v.resize(n);
  r.f64_into(s.m);
  r.f64_into(s.v);
  r.check_eof();
  return s;
}

void save_matrix(const EmbeddingMatrix& m, const std::string& path) {
  std::ofstream f = open_out(path);
  put_bytes(f, "CORRMAT1", 8);
  write_u64(f, m.rows);
  write_u32(f, static_cast<std::uint32_t>(m.dim));
  write_f64_span(f, m.data);
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

EmbeddingMatrix load_matrix(const std::string& path) {
  Reader r(path);
  r.expect_magic("CORRMAT1");
  const std::uint64_t rows = r.u64();
  const std::uint32_t dim = r.u32();
  EmbeddingMatrix m(rows, dim);
  r.f64_into(m.data);
  r.check_eof();
  return m;
}

}  // namespace corrnet
