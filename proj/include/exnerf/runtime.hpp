// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace exnerf {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Tapes allocate many multi-megabyte temporaries per step; without this
/// every one of them is a fresh mmap with its page faults. Idempotent.
void configure_allocator();

}  // namespace exnerf
