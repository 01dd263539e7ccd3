#include "codesep/bitstream.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "codesep/errors.hpp"

namespace codesep::bitstream {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'T', 'K'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 1 + 4 + 4 + 4 + 1 + 4 + 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  return static_cast<std::uint32_t>(in[at]) | (static_cast<std::uint32_t>(in[at + 1]) << 8) |
         (static_cast<std::uint32_t>(in[at + 2]) << 16) |
         (static_cast<std::uint32_t>(in[at + 3]) << 24);
}

}  // namespace

int token_width_bits(std::uint32_t codebook_size) {
  if (codebook_size < 2) throw std::invalid_argument("bitstream: codebook size must be >= 2");
  int bits = 0;
  std::uint32_t span = 1;
  while (span < codebook_size) {
    span <<= 1;
    ++bits;
  }
  return bits;
}

std::vector<std::uint8_t> pack(const TokenBitstream& ts) {
  const auto& h = ts.header;
  if (h.sample_rate_hz == 0 || h.token_rate_num == 0 || h.token_rate_den == 0) {
    throw std::invalid_argument("bitstream: header rates must be positive");
  }
  if (ts.streams.empty() || ts.streams.size() > 255) {
    throw std::invalid_argument("bitstream: need 1..255 streams");
  }
  const std::size_t T = ts.streams.front().size();
  for (const auto& s : ts.streams) {
    if (s.size() != T) throw std::invalid_argument("bitstream: stream lengths differ");
    for (int tok : s) {
      if (tok < 1 || tok > static_cast<int>(h.codebook_size)) {
        throw std::invalid_argument("bitstream: token out of range 1..M");
      }
    }
  }
  const int width = token_width_bits(h.codebook_size);

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  put_u32(out, h.sample_rate_hz);
  put_u32(out, h.token_rate_num);
  put_u32(out, h.token_rate_den);
  out.push_back(static_cast<std::uint8_t>(ts.streams.size()));
  put_u32(out, h.codebook_size);
  put_u32(out, static_cast<std::uint32_t>(T));

  std::uint8_t acc = 0;
  int filled = 0;
  for (std::size_t t = 0; t < T; ++t) {
    for (const auto& s : ts.streams) {
      const std::uint32_t value = static_cast<std::uint32_t>(s[t] - 1);
      for (int b = width - 1; b >= 0; --b) {
        acc = static_cast<std::uint8_t>((acc << 1) | ((value >> b) & 1u));
        if (++filled == 8) {
          out.push_back(acc);
          acc = 0;
          filled = 0;
        }
      }
    }
  }
  if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc << (8 - filled)));
  return out;
}

TokenBitstream unpack(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw ParseError("bitstream: header truncated", static_cast<long long>(bytes.size()));
  }
  for (int i = 0; i < 4; ++i) {
    if (bytes[i] != static_cast<std::uint8_t>(kMagic[i])) {
      throw ParseError("bitstream: bad magic", i);
    }
  }
  if (bytes[4] != kVersion) {
    throw ParseError("bitstream: unsupported version " + std::to_string(bytes[4]), 4);
  }
  TokenBitstream ts;
  ts.header.sample_rate_hz = get_u32(bytes, 5);
  ts.header.token_rate_num = get_u32(bytes, 9);
  ts.header.token_rate_den = get_u32(bytes, 13);
  const int num_streams = bytes[17];
  ts.header.codebook_size = get_u32(bytes, 18);
  const std::uint32_t T = get_u32(bytes, 22);
  if (ts.header.sample_rate_hz == 0 || ts.header.token_rate_num == 0 ||
      ts.header.token_rate_den == 0) {
    throw ParseError("bitstream: zero rate field", 5);
  }
  if (num_streams == 0) throw ParseError("bitstream: zero streams", 17);
  if (ts.header.codebook_size < 2) throw ParseError("bitstream: codebook size < 2", 18);

  const int width = token_width_bits(ts.header.codebook_size);
  const std::uint64_t payload_bits =
      static_cast<std::uint64_t>(T) * num_streams * static_cast<std::uint64_t>(width);
  const std::uint64_t payload_bytes = (payload_bits + 7) / 8;
  if (bytes.size() < kHeaderBytes + payload_bytes) {
    throw ParseError("bitstream: payload truncated", static_cast<long long>(bytes.size()));
  }
  if (bytes.size() > kHeaderBytes + payload_bytes) {
    throw ParseError("bitstream: trailing bytes after payload",
                     static_cast<long long>(kHeaderBytes + payload_bytes));
  }

  ts.streams.assign(num_streams, std::vector<int>(T));
  std::uint64_t bit = 0;
  auto read_bit = [&]() {
    const std::size_t byte_at = kHeaderBytes + (bit >> 3);
    const int shift = 7 - static_cast<int>(bit & 7);
    ++bit;
    return (bytes[byte_at] >> shift) & 1u;
  };
  for (std::uint32_t t = 0; t < T; ++t) {
    for (int s = 0; s < num_streams; ++s) {
      std::uint32_t value = 0;
      for (int b = 0; b < width; ++b) value = (value << 1) | read_bit();
      if (value >= ts.header.codebook_size) {
        throw ParseError("bitstream: token value " + std::to_string(value + 1) +
                             " exceeds codebook size",
                         static_cast<long long>(kHeaderBytes + ((bit - 1) >> 3)));
      }
      ts.streams[s][t] = static_cast<int>(value) + 1;
    }
  }
  while (bit < payload_bytes * 8) {
    if (read_bit() != 0) {
      throw ParseError("bitstream: nonzero padding bit",
                       static_cast<long long>(kHeaderBytes + ((bit - 1) >> 3)));
    }
  }
  return ts;
}

double bitrate_of(std::uint32_t token_rate_num, std::uint32_t token_rate_den,
                  std::uint32_t codebook_size, int streams, int stages) {
  if (token_rate_num == 0 || token_rate_den == 0 || streams < 1 || stages < 1) {
    throw std::invalid_argument("bitrate_of: arguments must be positive");
  }
  const double rate = static_cast<double>(token_rate_num) / token_rate_den;
  return rate * token_width_bits(codebook_size) * streams * stages;
}

}  // namespace codesep::bitstream
