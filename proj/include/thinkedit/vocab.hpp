#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "core.hpp"

namespace thinkedit {

// Shift tokens move the selected object by a signed displacement.
inline constexpr std::array<double, 10> kShiftBins{-0.5, -0.4, -0.3, -0.2, -0.1, 0.1, 0.2, 0.3, 0.4, 0.5};
// Size tokens set an absolute size; the first bin is the delete size.
inline constexpr std::array<double, 9> kSizeBins{0.05, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

enum class TokenKind : int { Select = 0, ShiftX, ShiftY, SetSize, SetColor, Noop, End };

struct TokenInfo {
  TokenKind kind = TokenKind::End;
  int slot = -1;       // Select
  double value = 0.0;  // shift amount, size, or color id
};

// Plan/reflect vocabulary:
//   SELECT(slot) x n_obj | SHIFT_X(bin) | SHIFT_Y(bin) | SET_SIZE(bin) | SET_COLOR(c) | NOOP | END
class PlanVocab {
 public:
  PlanVocab(int n_obj, int n_colors) : n_obj_(n_obj), n_colors_(n_colors) {}

  int size() const { return n_obj_ + 2 * static_cast<int>(kShiftBins.size()) +
                            static_cast<int>(kSizeBins.size()) + n_colors_ + 2; }
  int n_obj() const { return n_obj_; }
  int n_colors() const { return n_colors_; }

  int select(int slot) const { return slot; }
  int shift_x(int bin) const { return n_obj_ + bin; }
  int shift_y(int bin) const { return n_obj_ + static_cast<int>(kShiftBins.size()) + bin; }
  int set_size(int bin) const { return n_obj_ + 2 * static_cast<int>(kShiftBins.size()) + bin; }
  int set_color(int c) const { return set_size(0) + static_cast<int>(kSizeBins.size()) + c; }
  int noop() const { return size() - 2; }
  int end() const { return size() - 1; }

  bool valid(int tok) const { return tok >= 0 && tok < size(); }

  TokenInfo info(int tok) const {
    if (!valid(tok)) throw ArgumentError("token id outside the plan vocabulary");
    const int nb = static_cast<int>(kShiftBins.size());
    if (tok < n_obj_) return {TokenKind::Select, tok, 0.0};
    tok -= n_obj_;
    if (tok < nb) return {TokenKind::ShiftX, -1, kShiftBins[tok]};
    tok -= nb;
    if (tok < nb) return {TokenKind::ShiftY, -1, kShiftBins[tok]};
    tok -= nb;
    if (tok < static_cast<int>(kSizeBins.size())) return {TokenKind::SetSize, -1, kSizeBins[tok]};
    tok -= static_cast<int>(kSizeBins.size());
    if (tok < n_colors_) return {TokenKind::SetColor, -1, static_cast<double>(tok)};
    tok -= n_colors_;
    return tok == 0 ? TokenInfo{TokenKind::Noop, -1, 0.0} : TokenInfo{TokenKind::End, -1, 0.0};
  }

  std::string name(int tok) const {
    const TokenInfo t = info(tok);
    auto num = [](double v) {
      std::string s = std::to_string(v);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return s;
    };
    switch (t.kind) {
      case TokenKind::Select: return "SELECT(" + std::to_string(t.slot) + ")";
      case TokenKind::ShiftX: return "SHIFT_X(" + num(t.value) + ")";
      case TokenKind::ShiftY: return "SHIFT_Y(" + num(t.value) + ")";
      case TokenKind::SetSize: return "SET_SIZE(" + num(t.value) + ")";
      case TokenKind::SetColor: return "SET_COLOR(" + num(t.value) + ")";
      case TokenKind::Noop: return "NOOP";
      case TokenKind::End: return "END";
    }
    return "?";
  }

 private:
  int n_obj_;
  int n_colors_;
};

// Latent encoding of a colour id in [-1, 1].
inline double color_latent(int color_id, int n_colors) {
  if (n_colors <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(color_id) / static_cast<double>(n_colors - 1);
}

// Per-object latent block: (pos_x, pos_y, size, colour latent).
inline Vec encode_scene(const Scene& s, int n_colors) {
  Vec x;
  x.reserve(kAttrsPerObject * s.size());
  for (const auto& o : s.objects()) {
    x.push_back(o.pos[0]);
    x.push_back(o.pos[1]);
    x.push_back(o.size);
    x.push_back(color_latent(o.color_id, n_colors));
  }
  return x;
}

// What a token sequence asks the generator to do, expressed in latent space.
struct PlanEffect {
  Vec planned;                  // reference latent with the edits applied
  Vec mask;                     // 1 where an attribute was edited
  Vec selected;                 // 1 for every slot that was selected
  int content_tokens = 0;       // tokens other than END
};

// Interprets tokens in order, starting from `effect`. SELECT sets the current
// slot; attribute tokens act on it; END stops; NOOP and orphan edits do nothing.
inline void apply_tokens(const PlanVocab& vocab, const std::vector<int>& tokens, int n_colors, PlanEffect& effect) {
  int cur = -1;
  for (int tok : tokens) {
    const TokenInfo t = vocab.info(tok);
    if (t.kind == TokenKind::End) break;
    ++effect.content_tokens;
    if (t.kind == TokenKind::Select) {
      cur = t.slot;
      effect.selected[static_cast<std::size_t>(cur)] = 1.0;
      continue;
    }
    if (cur < 0 || t.kind == TokenKind::Noop) continue;
    const std::size_t base = kAttrsPerObject * static_cast<std::size_t>(cur);
    switch (t.kind) {
      case TokenKind::ShiftX:
        effect.planned[base] = std::clamp(effect.planned[base] + t.value, -1.0, 1.0);
        effect.mask[base] = 1.0;
        break;
      case TokenKind::ShiftY:
        effect.planned[base + 1] = std::clamp(effect.planned[base + 1] + t.value, -1.0, 1.0);
        effect.mask[base + 1] = 1.0;
        break;
      case TokenKind::SetSize:
        effect.planned[base + 2] = t.value;
        effect.mask[base + 2] = 1.0;
        break;
      case TokenKind::SetColor:
        effect.planned[base + 3] = color_latent(static_cast<int>(t.value), n_colors);
        effect.mask[base + 3] = 1.0;
        break;
      default: break;
    }
  }
}

inline PlanEffect plan_effect(const PlanVocab& vocab, const Scene& ref, const std::vector<int>& plan,
                              const std::vector<int>* reflection = nullptr) {
  PlanEffect e;
  e.planned = encode_scene(ref, vocab.n_colors());
  e.mask.assign(e.planned.size(), 0.0);
  e.selected.assign(ref.size(), 0.0);
  apply_tokens(vocab, plan, vocab.n_colors(), e);
  if (reflection != nullptr) apply_tokens(vocab, *reflection, vocab.n_colors(), e);
  return e;
}

}  // namespace thinkedit
