#pragma once

#include <array>
#include <string>

namespace detangle {

// Parameter blocks are templated over the storage type so the same layout
// serves both the stored tensors (T = Tensor) and their per-graph leaf
// bindings (T = Node*). visit() enumerates members in a fixed order; that
// order defines checkpoint layout and optimizer state alignment.

template <typename T>
struct LstmCellP {
  T w_ix, w_ih, b_i;
  T w_fx, w_fh, b_f;
  T w_ox, w_oh, b_o;
  T w_ux, w_uh, b_u;

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".w_ix", w_ix), f(p + ".w_ih", w_ih), f(p + ".b_i", b_i);
    f(p + ".w_fx", w_fx), f(p + ".w_fh", w_fh), f(p + ".b_f", b_f);
    f(p + ".w_ox", w_ox), f(p + ".w_oh", w_oh), f(p + ".b_o", b_o);
    f(p + ".w_ux", w_ux), f(p + ".w_uh", w_uh), f(p + ".b_u", b_u);
  }
};

inline constexpr std::size_t kNumChildLabels = 3;

// Gates i/o/u carry one hidden matrix per child label; the forget gate
// carries one per (gated child label, summed child label) pair.
template <typename T>
struct DagLstmP {
  T w_ix, b_i;
  std::array<T, kNumChildLabels> w_ih;
  T w_ox, b_o;
  std::array<T, kNumChildLabels> w_oh;
  T w_ux, b_u;
  std::array<T, kNumChildLabels> w_uh;
  T w_fx, b_f;
  std::array<std::array<T, kNumChildLabels>, kNumChildLabels> w_fh;

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".w_ix", w_ix), f(p + ".b_i", b_i);
    for (std::size_t l = 0; l < kNumChildLabels; ++l)
      f(p + ".w_ih" + std::to_string(l), w_ih[l]);
    f(p + ".w_ox", w_ox), f(p + ".b_o", b_o);
    for (std::size_t l = 0; l < kNumChildLabels; ++l)
      f(p + ".w_oh" + std::to_string(l), w_oh[l]);
    f(p + ".w_ux", w_ux), f(p + ".b_u", b_u);
    for (std::size_t l = 0; l < kNumChildLabels; ++l)
      f(p + ".w_uh" + std::to_string(l), w_uh[l]);
    f(p + ".w_fx", w_fx), f(p + ".b_f", b_f);
    for (std::size_t a = 0; a < kNumChildLabels; ++a)
      for (std::size_t b = 0; b < kNumChildLabels; ++b)
        f(p + ".w_fh" + std::to_string(a) + std::to_string(b), w_fh[a][b]);
  }
};

template <typename T>
struct GruP {
  T w_zx, w_zh, b_z;
  T w_rx, w_rh, b_r;
  T w_hx, w_hh, b_h;

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".w_zx", w_zx), f(p + ".w_zh", w_zh), f(p + ".b_z", b_z);
    f(p + ".w_rx", w_rx), f(p + ".w_rh", w_rh), f(p + ".b_r", b_r);
    f(p + ".w_hx", w_hx), f(p + ".w_hh", w_hh), f(p + ".b_h", b_h);
  }
};

// three affine layers, rectifier between, scalar output
template <typename T>
struct ScorerP {
  T w1, b1, w2, b2, w3, b3;

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".w1", w1), f(p + ".b1", b1);
    f(p + ".w2", w2), f(p + ".b2", b2);
    f(p + ".w3", w3), f(p + ".b3", b3);
  }
};

}  // namespace detangle
