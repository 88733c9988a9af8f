import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.spec.ts"],
    testTimeout: 600_000,
    hookTimeout: 600_000,
    // parity tests batch their own subprocess concurrency
    pool: "threads",
    poolOptions: { threads: { singleThread: true } },
  },
});
