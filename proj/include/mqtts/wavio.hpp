#pragma once

// 16-bit PCM mono RIFF/WAVE reading and writing.

#include <string>

#include "mqtts/audio.hpp"

namespace mqtts {

Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace mqtts
