#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <utility>

namespace gstm {

/// Write-once cached value. Concurrent first calls compute it exactly once.
/// Copies start empty: a copied owner may be mutated and must not alias the cache.
template <typename V>
class Lazy
{
public:
  Lazy()
    : state_(std::make_shared<State>())
  {
  }
  Lazy(Lazy const &)
    : Lazy()
  {
  }
  Lazy &operator=(Lazy const &)
  {
    state_ = std::make_shared<State>();
    return *this;
  }
  Lazy(Lazy &&o) noexcept
    : state_(std::exchange(o.state_, std::make_shared<State>()))
  {
  }
  Lazy &operator=(Lazy &&o) noexcept
  {
    state_ = std::exchange(o.state_, std::make_shared<State>());
    return *this;
  }

  template <typename F>
  V const &get(F &&make) const
  {
    std::call_once(state_->once, [&] { state_->value.emplace(make()); });
    return *state_->value;
  }

  bool ready() const { return state_->value.has_value(); }
  void reset() { state_ = std::make_shared<State>(); }

private:
  struct State
  {
    std::once_flag once;
    std::optional<V> value;
  };
  std::shared_ptr<State> state_;
};

} // namespace gstm
