#pragma once

#include <filesystem>

#include "throatline/audio.hpp"

namespace throatline {

enum class WavEncoding { kPcm16, kFloat32 };

// Reads RIFF/WAVE with fmt type 1 (16-bit PCM) or 3 (32-bit float), any
// channel count. Channels are averaged to mono; PCM16 is scaled by 1/32768.
SampleBuffer wav_read(const std::filesystem::path& path);

// Writes mono. PCM16 clamps to [-1, 1 - 1/32768] before scaling.
void wav_write(const SampleBuffer& buffer, const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace throatline
