// Deterministic plain-English text synthesizer. Produces an original
// corpus with natural byte statistics for the desk-scale training runs,
// so experiments do not depend on any external download.
#pragma once

#include <cstdint>
#include <string>

namespace smamba {

std::string generate_corpus(std::uint64_t seed, std::size_t min_bytes);

}  // namespace smamba
