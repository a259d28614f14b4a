#pragma once

#include <Eigen/Core>

#include <exception>
#include <mutex>

namespace shadowem {

/// Number of workers for a request; values <= 0 mean "all available".
int resolve_workers(int requested);

namespace detail {
void parallel_for_impl(Eigen::Index count, int workers, void (*body)(void*, Eigen::Index),
                       void* context);
}

/// Runs body(i) for i in [0, count) across `workers` threads. Iterations must
/// write disjoint outputs. The first exception thrown by any iteration is
/// rethrown on the calling thread.
template <typename Body>
void parallel_for(Eigen::Index count, int workers, Body&& body) {
  struct Context {
    Body* body;
    std::exception_ptr error;
    std::mutex guard;
  } context{&body, nullptr, {}};
  detail::parallel_for_impl(
      count, workers,
      [](void* raw, Eigen::Index i) {
        auto* ctx = static_cast<Context*>(raw);
        try {
          (*ctx->body)(i);
        } catch (...) {
          std::lock_guard lock(ctx->guard);
          if (!ctx->error) ctx->error = std::current_exception();
        }
      },
      &context);
  if (context.error) std::rethrow_exception(context.error);
}

}  // namespace shadowem
