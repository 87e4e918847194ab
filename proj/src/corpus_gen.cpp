#include "smamba/corpus_gen.hpp"

#include <array>
#include <cctype>
#include <vector>

#include "smamba/rng.hpp"

namespace smamba {

namespace {

const char* kSubjects[] = {
    "the river",      "a gray heron",   "the old miller", "our small boat",
    "the north wind", "a lantern",      "the gardener",   "the tide",
    "an early frost", "the carpenter",  "a line of geese", "the harvest",
    "the lighthouse", "a patient horse", "the schoolhouse", "the orchard",
    "a narrow path",  "the fisherman",  "the late train",  "a kettle",
    "the mountain",   "a stray dog",    "the ferry",       "the meadow",
    "an old map",     "the blacksmith", "a winter storm",  "the village",
};

const char* kVerbs[] = {
    "crossed",  "followed", "remembered", "carried", "reached",  "watched",
    "repaired", "gathered", "measured",   "held",    "promised", "turned",
    "weathered", "signaled", "sheltered",  "guided",  "warmed",   "woke",
    "steadied", "answered", "outlasted",  "marked",  "greeted",   "passed",
};

const char* kObjects[] = {
    "the far bank",      "a bundle of letters", "the morning catch",
    "its steady course", "the broken gate",     "a week of rain",
    "the first light",   "the quiet harbor",    "an empty field",
    "the last of the coal", "a row of pines",   "the low bridge",
    "the open window",   "a basket of apples",  "the worn ledger",
    "the bell rope",     "a patch of clover",   "the south road",
};

const char* kAdverbials[] = {
    "before dawn",
    "after the long thaw",
    "in the middle of October",
    "without a word",
    "under a clear sky",
    "while the town slept",
    "against the current",
    "by the light of the moon",
    "long after the bells",
    "despite the cold",
    "as the fog lifted",
    "near the old quarry",
};

const char* kOpeners[] = {
    "That year",      "In the morning", "By evening",   "Later",
    "For a while",    "At the turn of the season", "Soon enough",
    "Once",           "Now and then",   "In those days", "Afterward",
    "Little by little",
};

const char* kClauses[] = {
    "and nobody thought it strange",
    "though the rain kept on",
    "as if it had always been so",
    "which surprised no one",
    "and the children counted the days",
    "while the kettle sang on the stove",
    "because the roads were still soft",
    "and the lamps burned late",
    "though the almanac said otherwise",
    "as the clock struck nine",
};

const char* kTitles[] = {
    "Notes from the Valley", "The Crossing", "A Field Almanac",
    "Letters from the Coast", "The Mill Year", "Harbor and Hill",
    "A Country Calendar", "The Long Meadow",
};

template <std::size_t N>
const char* pick(Rng& rng, const char* (&arr)[N]) {
  return arr[rng.below(N)];
}

void append_sentence(std::string& out, Rng& rng) {
  const int form = static_cast<int>(rng.below(5));
  std::string s;
  switch (form) {
    case 0:
      s = std::string(pick(rng, kSubjects)) + " " + pick(rng, kVerbs) + " " +
          pick(rng, kObjects) + " " + pick(rng, kAdverbials) + ".";
      break;
    case 1:
      s = std::string(pick(rng, kOpeners)) + ", " + pick(rng, kSubjects) +
          " " + pick(rng, kVerbs) + " " + pick(rng, kObjects) + ".";
      break;
    case 2:
      s = std::string(pick(rng, kSubjects)) + " " + pick(rng, kVerbs) + " " +
          pick(rng, kObjects) + ", " + pick(rng, kClauses) + ".";
      break;
    case 3: {
      const int year = 1840 + static_cast<int>(rng.below(120));
      s = std::string("In ") + std::to_string(year) + " " +
          pick(rng, kSubjects) + " " + pick(rng, kVerbs) + " " +
          pick(rng, kObjects) + ".";
      break;
    }
    default:
      s = std::string(pick(rng, kOpeners)) + " " + pick(rng, kAdverbials) +
          ", " + pick(rng, kSubjects) + " " + pick(rng, kVerbs) + " " +
          pick(rng, kObjects) + ", " + pick(rng, kClauses) + ".";
      break;
  }
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  out += s;
}

}  // namespace

std::string generate_corpus(std::uint64_t seed, std::size_t min_bytes) {
  Rng rng(seed);
  std::string out;
  out.reserve(min_bytes + 4096);
  int chapter = 1;
  while (out.size() < min_bytes) {
    out += pick(rng, kTitles);
    out += ", part ";
    out += std::to_string(chapter++);
    out += "\n\n";
    const int paragraphs = 3 + static_cast<int>(rng.below(4));
    for (int p = 0; p < paragraphs; ++p) {
      const int sentences = 3 + static_cast<int>(rng.below(5));
      for (int s = 0; s < sentences; ++s) {
        append_sentence(out, rng);
        out += (s + 1 < sentences) ? " " : "";
      }
      out += "\n\n";
    }
  }
  return out;
}

}  // namespace smamba
