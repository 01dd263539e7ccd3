#include "codesep/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "codesep/errors.hpp"

namespace codesep::wav {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

}  // namespace

dsp::Waveform read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("wav: not a RIFF/WAVE file: " + path);
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_pos = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    std::uint32_t len = read_u32(bytes.data() + pos + 4);
    std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw DataError("wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("wav: short fmt chunk in " + path);
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_pos = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_pos == 0) throw DataError("wav: missing fmt or data chunk in " + path);
  if (format != 1 || bits != 16) {
    throw DataError("wav: only 16-bit PCM supported: " + path);
  }
  if (channels != 1) throw DataError("wav: only mono supported: " + path);
  if (rate == 0) throw DataError("wav: zero sample rate in " + path);

  dsp::Waveform w;
  w.sample_rate_hz = static_cast<int>(rate);
  const std::size_t n = data_len / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::int16_t s = static_cast<std::int16_t>(read_u16(bytes.data() + data_pos + 2 * i));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void write(const std::string& path, const dsp::Waveform& w) {
  const std::uint32_t n = static_cast<std::uint32_t>(w.size());
  std::vector<unsigned char> bytes;
  bytes.reserve(44 + 2 * n);
  bytes.insert(bytes.end(), {'R', 'I', 'F', 'F'});
  put_u32(bytes, 36 + 2 * n);
  bytes.insert(bytes.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(bytes, 16);
  put_u16(bytes, 1);  // PCM
  put_u16(bytes, 1);  // mono
  put_u32(bytes, static_cast<std::uint32_t>(w.sample_rate_hz));
  put_u32(bytes, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  put_u16(bytes, 2);
  put_u16(bytes, 16);
  bytes.insert(bytes.end(), {'d', 'a', 't', 'a'});
  put_u32(bytes, 2 * n);
  for (std::uint32_t i = 0; i < n; ++i) {
    double v = w.samples[i] * 32768.0;
    long q = std::lround(v);
    if (q > 32767) q = 32767;
    if (q < -32768) q = -32768;
    put_u16(bytes, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("wav: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("wav: write failed for " + path);
}

}  // namespace codesep::wav
