// Copyright 2026 The cvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cvqa/data/templates.hpp"

#include <algorithm>
#include <array>

#include "cvqa/data/vocab.hpp"
#include "cvqa/errors.hpp"

namespace cvqa::data {
namespace {

using Kind = Subject::Kind;

constexpr std::array<const char*, kNumTemplates> kTemplateNames{"What", "Which", "Where", "Is", "Does", "WhichSide"};

std::string subject_word(const Subject& s) {
  switch (s.kind) {
    case Kind::kDisease: return name(static_cast<Pathology>(s.value));
    case Kind::kOrgan: return name(static_cast<OrganType>(s.value));
    case Kind::kModality: return name(static_cast<Modality>(s.value));
  }
  return {};
}

std::optional<Subject> subject_from(const std::string& w) {
  if (auto p = pathology_from(w)) return Subject{Kind::kDisease, static_cast<int>(*p)};
  if (auto o = organ_from(w)) return Subject{Kind::kOrgan, static_cast<int>(*o)};
  if (auto m = modality_from(w)) return Subject{Kind::kModality, static_cast<int>(*m)};
  return std::nullopt;
}

std::vector<std::string> organ_sides(const Scene& scene, OrganType o) {
  std::vector<std::string> sides;
  for (Side s : {Side::kLeft, Side::kRight, Side::kCenter}) {
    for (const auto& r : scene.organs) {
      if (r.organ == o && r.side == s) {
        sides.emplace_back(name(s));
        break;
      }
    }
  }
  return sides;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::string listing(const Scene& scene, Kind kind) {
  std::vector<std::string> names;
  if (kind == Kind::kDisease) {
    for (int p = 0; p < kNumPathologies; ++p) {
      if (scene.find(static_cast<Pathology>(p))) names.emplace_back(name(static_cast<Pathology>(p)));
    }
  } else {
    for (int o = 0; o < kNumOrgans; ++o) {
      if (scene.has_organ(static_cast<OrganType>(o))) names.emplace_back(name(static_cast<OrganType>(o)));
    }
  }
  if (names.empty()) throw TemplateMismatch("listing question on a scene without matching content");
  return join(names);
}

template <typename F>
auto pick_from(const std::vector<F>& xs, Rng& rng) {
  return xs[uniform_index(rng, xs.size())];
}

}  // namespace

const char* name(TemplateId t) { return kTemplateNames[static_cast<std::size_t>(t)]; }
const char* name(QType q) { return q == QType::kOpen ? "open" : "closed"; }

std::optional<TemplateId> template_from(const std::string& s) {
  for (int i = 0; i < kNumTemplates; ++i) {
    if (s == kTemplateNames[static_cast<std::size_t>(i)]) return static_cast<TemplateId>(i);
  }
  return std::nullopt;
}

std::optional<QType> qtype_from(const std::string& s) {
  std::string low;
  for (char c : s) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (low == "open") return QType::kOpen;
  if (low == "closed") return QType::kClosed;
  return std::nullopt;
}

QType qtype_of(TemplateId t) {
  return (t == TemplateId::kWhat || t == TemplateId::kWhich || t == TemplateId::kWhere) ? QType::kOpen
                                                                                       : QType::kClosed;
}

std::string question_text(const ParsedQuestion& q, bool plural) {
  const std::string subj = subject_word(q.subject);
  switch (q.id) {
    case TemplateId::kWhat:
    case TemplateId::kWhich: {
      const std::string lead = q.id == TemplateId::kWhat ? "what" : "which";
      if (q.subject.kind == Kind::kOrgan) return lead + " organ is in the image?";
      return lead + (plural ? " diseases are in the image?" : " disease is in the image?");
    }
    case TemplateId::kWhere: return "where is the " + subj + " located?";
    case TemplateId::kIs: {
      const bool vowel = subj == "xray" || subj == "mri";
      return std::string("is this ") + (vowel ? "an " : "a ") + subj + "?";
    }
    case TemplateId::kDoes: return "does the image contain " + subj + "?";
    case TemplateId::kWhichSide: return "which side is " + subj + " in the image?";
  }
  return {};
}

std::string answer_for(const Scene& scene, const ParsedQuestion& q) {
  const auto& s = q.subject;
  switch (q.id) {
    case TemplateId::kWhat:
    case TemplateId::kWhich: return listing(scene, s.kind == Kind::kOrgan ? Kind::kOrgan : Kind::kDisease);
    case TemplateId::kWhere:
      if (s.kind == Kind::kDisease) {
        const auto* f = scene.find(static_cast<Pathology>(s.value));
        if (!f) throw TemplateMismatch("where-question about an absent lesion");
        return name(f->location);
      }
      if (s.kind == Kind::kOrgan) {
        auto sides = organ_sides(scene, static_cast<OrganType>(s.value));
        if (sides.empty()) throw TemplateMismatch("where-question about an absent organ");
        return join(sides);
      }
      break;
    case TemplateId::kIs:
      if (s.kind == Kind::kModality) return static_cast<int>(scene.modality) == s.value ? "yes" : "no";
      if (s.kind == Kind::kOrgan) return scene.has_organ(static_cast<OrganType>(s.value)) ? "yes" : "no";
      break;
    case TemplateId::kDoes:
      if (s.kind == Kind::kDisease) return scene.find(static_cast<Pathology>(s.value)) ? "yes" : "no";
      if (s.kind == Kind::kOrgan) return scene.has_organ(static_cast<OrganType>(s.value)) ? "yes" : "no";
      break;
    case TemplateId::kWhichSide:
      if (s.kind == Kind::kDisease) {
        const auto* f = scene.find(static_cast<Pathology>(s.value));
        if (!f) throw TemplateMismatch("side-question about an absent lesion");
        return name(side_of(f->location));
      }
      if (s.kind == Kind::kOrgan) {
        auto sides = organ_sides(scene, static_cast<OrganType>(s.value));
        if (sides.size() != 1 || sides[0] == "center") {
          throw TemplateMismatch("side-question about an organ without a single side");
        }
        return sides[0];
      }
      break;
  }
  throw TemplateMismatch(std::string("subject not allowed for template ") + name(q.id));
}

QaText make_question_answer(const Scene& scene, TemplateId id, Rng& rng) {
  std::vector<int> present, absent, organs, sided_organs;
  for (int p = 0; p < kNumPathologies; ++p) (scene.find(static_cast<Pathology>(p)) ? present : absent).push_back(p);
  for (int o = 0; o < kNumOrgans; ++o) {
    if (scene.has_organ(static_cast<OrganType>(o))) {
      organs.push_back(o);
      auto sides = organ_sides(scene, static_cast<OrganType>(o));
      if (sides.size() == 1 && sides[0] != "center") sided_organs.push_back(o);
    }
  }
  const double u = uniform01(rng);
  ParsedQuestion q{id, {}};
  switch (id) {
    case TemplateId::kWhat:
    case TemplateId::kWhich:
      if (!present.empty() && (organs.empty() || u < 0.75)) {
        q.subject = {Kind::kDisease, 0};
      } else if (!organs.empty()) {
        q.subject = {Kind::kOrgan, 0};
      } else {
        throw TemplateMismatch("listing question on an empty scene");
      }
      break;
    case TemplateId::kWhere:
      if (!present.empty() && (organs.empty() || u < 0.85)) {
        q.subject = {Kind::kDisease, pick_from(present, rng)};
      } else if (!organs.empty()) {
        q.subject = {Kind::kOrgan, pick_from(organs, rng)};
      } else {
        throw TemplateMismatch("where-question on an empty scene");
      }
      break;
    case TemplateId::kIs:
      if (u < 0.75) {
        int m = static_cast<int>(scene.modality);
        if (bernoulli(rng, 0.5)) m = (m + 1 + static_cast<int>(uniform_index(rng, kNumModalities - 1))) % kNumModalities;
        q.subject = {Kind::kModality, m};
      } else {
        q.subject = {Kind::kOrgan, static_cast<int>(uniform_index(rng, kNumOrgans))};
      }
      break;
    case TemplateId::kDoes:
      if (u < 0.8) {
        const bool ask_present = !present.empty() && (absent.empty() || bernoulli(rng, 0.5));
        q.subject = {Kind::kDisease, pick_from(ask_present ? present : absent, rng)};
      } else {
        q.subject = {Kind::kOrgan, static_cast<int>(uniform_index(rng, kNumOrgans))};
      }
      break;
    case TemplateId::kWhichSide:
      if (!present.empty() && (sided_organs.empty() || u < 0.85)) {
        q.subject = {Kind::kDisease, pick_from(present, rng)};
      } else if (!sided_organs.empty()) {
        q.subject = {Kind::kOrgan, pick_from(sided_organs, rng)};
      } else {
        throw TemplateMismatch("side-question on a scene without a one-sided finding");
      }
      break;
  }
  QaText out;
  out.parsed = q;
  out.answer = answer_for(scene, q);
  out.question = question_text(q, q.subject.kind == Kind::kDisease && present.size() > 1);
  return out;
}

std::optional<ParsedQuestion> parse_question(const std::vector<std::string>& w) {
  auto eq = [&w](std::initializer_list<const char*> pattern, std::size_t subject_pos, std::optional<Subject>* out) {
    if (w.size() != pattern.size()) return false;
    std::size_t i = 0;
    for (const char* p : pattern) {
      if (i == subject_pos) {
        *out = subject_from(w[i]);
        if (!*out) return false;
      } else if (w[i] != p) {
        return false;
      }
      ++i;
    }
    return true;
  };
  constexpr std::size_t kNone = 99;
  std::optional<Subject> s;
  for (TemplateId id : {TemplateId::kWhat, TemplateId::kWhich}) {
    const char* lead = id == TemplateId::kWhat ? "what" : "which";
    if (eq({lead, "disease", "is", "in", "the", "image"}, kNone, &s) ||
        eq({lead, "diseases", "are", "in", "the", "image"}, kNone, &s)) {
      return ParsedQuestion{id, {Kind::kDisease, 0}};
    }
    if (eq({lead, "organ", "is", "in", "the", "image"}, kNone, &s)) return ParsedQuestion{id, {Kind::kOrgan, 0}};
  }
  if (eq({"where", "is", "the", "", "located"}, 3, &s) && s->kind != Kind::kModality) {
    return ParsedQuestion{TemplateId::kWhere, *s};
  }
  if ((eq({"is", "this", "a", ""}, 3, &s) || eq({"is", "this", "an", ""}, 3, &s)) && s->kind != Kind::kDisease) {
    const bool vowel = w[3] == "xray" || w[3] == "mri";
    if ((w[2] == "an") == vowel) return ParsedQuestion{TemplateId::kIs, *s};
    return std::nullopt;
  }
  if (eq({"does", "the", "image", "contain", ""}, 4, &s) && s->kind != Kind::kModality) {
    return ParsedQuestion{TemplateId::kDoes, *s};
  }
  if (eq({"which", "side", "is", "", "in", "the", "image"}, 3, &s) && s->kind != Kind::kModality) {
    return ParsedQuestion{TemplateId::kWhichSide, *s};
  }
  return std::nullopt;
}

std::string question_type_key(const std::vector<std::string>& words) {
  if (words.empty()) return "Else";
  for (const char* k : {"does", "is", "which", "where", "what", "how"}) {
    if (words[0] == k) {
      std::string key = k;
      key[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(key[0])));
      return key;
    }
  }
  return "Else";
}

std::string corrupt_answer(const ParsedQuestion& q, const std::string& truth, Rng& rng) {
  std::vector<std::string> options;
  switch (q.id) {
    case TemplateId::kWhat:
    case TemplateId::kWhich:
      if (q.subject.kind == Kind::kOrgan) {
        for (int o = 0; o < kNumOrgans; ++o) options.emplace_back(name(static_cast<OrganType>(o)));
      } else {
        for (int p = 0; p < kNumPathologies; ++p) options.emplace_back(name(static_cast<Pathology>(p)));
      }
      break;
    case TemplateId::kWhere:
      if (q.subject.kind == Kind::kOrgan) {
        options = {"left", "right", "center", "left right"};
      } else {
        for (int l = 0; l < kNumQuadrants; ++l) options.push_back(name(static_cast<Quadrant>(l)));
      }
      break;
    case TemplateId::kIs:
    case TemplateId::kDoes: options = {"yes", "no"}; break;
    case TemplateId::kWhichSide: options = {"left", "right"}; break;
  }
  options.erase(std::remove(options.begin(), options.end(), truth), options.end());
  return options[uniform_index(rng, options.size())];
}

}  // namespace cvqa::data
