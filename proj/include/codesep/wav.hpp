#pragma once

#include <string>

#include "codesep/dsp.hpp"

namespace codesep::wav {

// Reads a mono 16-bit PCM little-endian WAV file. Samples are mapped to
// [-1, 1) by dividing by 32768. Throws DataError on malformed or unsupported
// files.
dsp::Waveform read(const std::string& path);

// Writes mono 16-bit PCM. Samples are clamped to [-1, 32767/32768] and
// rounded to the nearest integer level.
void write(const std::string& path, const dsp::Waveform& w);

}  // namespace codesep::wav
