#pragma once

#include <cstdint>
#include <vector>

namespace codesep::bitstream {

// Header of the CSTK token container. The token rate is kept as a rational
// so non-integer rates survive the round trip exactly.
struct BitstreamHeader {
  std::uint32_t sample_rate_hz = 0;
  std::uint32_t token_rate_num = 0;
  std::uint32_t token_rate_den = 1;
  std::uint32_t codebook_size = 0;  // M
};

struct TokenBitstream {
  BitstreamHeader header;
  // One base-token sequence per stream, equal lengths, entries in 1..M.
  std::vector<std::vector<int>> streams;
};

// Bits per token field: ceil(log2 M).
int token_width_bits(std::uint32_t codebook_size);

// Serialize: magic "CSTK", version 1, header fields little-endian, then the
// payload of 0-based tokens, MSB-first within each fixed-width field,
// streams interleaved per frame, zero padding to the byte boundary.
std::vector<std::uint8_t> pack(const TokenBitstream& ts);

// Parse; raises ParseError with the byte offset on malformed input
// (bad magic/version, inconsistent header, truncation, trailing data,
// nonzero padding bits).
TokenBitstream unpack(const std::vector<std::uint8_t>& bytes);

// Transmitted rate in bits/s.
double bitrate_of(std::uint32_t token_rate_num, std::uint32_t token_rate_den,
                  std::uint32_t codebook_size, int streams, int stages);

}  // namespace codesep::bitstream
