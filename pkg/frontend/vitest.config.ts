import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // full-size extraction runs a 12-layer transformer on one CPU core;
    // don't make the heavy tests share it with other files
    fileParallelism: false,
    testTimeout: 120_000,
    hookTimeout: 60_000,
  },
});
