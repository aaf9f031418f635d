// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main() {
  std::puts("cad: placeholder");
  return 0;
}
