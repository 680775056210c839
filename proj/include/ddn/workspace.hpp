#pragma once

// Analytic workspace accounting.
//
// Every buffer the library allocates goes through TrackingAllocator, which
// reports its byte size to the innermost live WorkspaceScope on the calling
// thread (and to every enclosing scope). A scope only counts allocations made
// while it was alive, so buffers that outlive a scope and are freed later do
// not corrupt the books of an unrelated scope.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <new>
#include <utility>
#include <vector>

namespace ddn {

class WorkspaceScope;

namespace detail {

struct WorkspaceState {
  std::vector<WorkspaceScope*> scopes;
  std::uint64_t serial = 0;
};

inline WorkspaceState& workspace_state() {
  thread_local WorkspaceState state;
  return state;
}

}  // namespace detail

class WorkspaceScope {
 public:
  WorkspaceScope() : start_serial_(detail::workspace_state().serial) {
    detail::workspace_state().scopes.push_back(this);
  }

  ~WorkspaceScope() {
    auto& scopes = detail::workspace_state().scopes;
    scopes.erase(std::find(scopes.begin(), scopes.end(), this));
  }

  WorkspaceScope(const WorkspaceScope&) = delete;
  WorkspaceScope& operator=(const WorkspaceScope&) = delete;

  std::size_t current_bytes() const noexcept { return current_; }
  std::size_t peak_bytes() const noexcept { return peak_; }

 private:
  friend void record_allocation(std::size_t, std::uint64_t&) noexcept;
  friend void record_deallocation(std::size_t, std::uint64_t) noexcept;

  std::uint64_t start_serial_;
  std::size_t current_ = 0;
  std::size_t peak_ = 0;
};

inline void record_allocation(std::size_t bytes, std::uint64_t& serial) noexcept {
  auto& state = detail::workspace_state();
  serial = ++state.serial;
  for (WorkspaceScope* scope : state.scopes) {
    scope->current_ += bytes;
    scope->peak_ = std::max(scope->peak_, scope->current_);
  }
}

inline void record_deallocation(std::size_t bytes, std::uint64_t serial) noexcept {
  for (WorkspaceScope* scope : detail::workspace_state().scopes) {
    if (serial > scope->start_serial_) scope->current_ -= std::min(bytes, scope->current_);
  }
}

/// std::allocator replacement that reports payload bytes to the workspace
/// accountant. A small header in front of each block remembers the
/// allocation serial.
template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t count) {
    const std::size_t bytes = count * sizeof(T);
    auto* raw = static_cast<std::byte*>(
        ::operator new(bytes + kHeader, std::align_val_t{kAlign}));
    auto* header = reinterpret_cast<Header*>(raw);
    header->bytes = bytes;
    record_allocation(bytes, header->serial);
    return reinterpret_cast<T*>(raw + kHeader);
  }

  void deallocate(T* ptr, std::size_t) noexcept {
    auto* raw = reinterpret_cast<std::byte*>(ptr) - kHeader;
    auto* header = reinterpret_cast<Header*>(raw);
    record_deallocation(header->bytes, header->serial);
    ::operator delete(raw, std::align_val_t{kAlign});
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }

 private:
  struct Header {
    std::size_t bytes;
    std::uint64_t serial;
  };
  static constexpr std::size_t kAlign = std::max<std::size_t>(alignof(T), 16);
  static constexpr std::size_t kHeader = std::max<std::size_t>(sizeof(Header), kAlign);
};

template <class T>
using tracked_vector = std::vector<T, TrackingAllocator<T>>;

/// Runs `fn` inside a fresh scope and returns the peak number of
/// simultaneously live tracked bytes it allocated.
template <class F>
std::size_t track_workspace(F&& fn) {
  WorkspaceScope scope;
  std::forward<F>(fn)();
  return scope.peak_bytes();
}

}  // namespace ddn
