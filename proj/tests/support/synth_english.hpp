// Deterministic English-like regular verbs for data-hungry tests: each
// generated lemma yields four UniMorph rows (infinitive, third person
// singular, past, gerund) built by standard orthographic rules, so
// lemmatization reduces to learnable suffix stripping.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace synth {

struct Verb {
  std::string lemma, third, past, gerund;
};

// Applies +s/+es/ies, +ed/+d/ied, +ing with e-drop and final-consonant
// doubling to one lemma.
Verb inflect(const std::string& lemma);

// The first `count` unique lemmas from a fixed onset/nucleus/coda grid.
std::vector<std::string> lemmas(std::size_t count);

// UniMorph triplet text, four lines per lemma: "lemma TAB form TAB tags".
std::string unimorph_text(std::size_t lemma_count);

void write_unimorph(const std::string& path, std::size_t lemma_count);

}  // namespace synth
