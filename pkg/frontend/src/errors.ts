/** Typed binding failures: what went wrong and, for CLI errors, the native message. */
export class BindingError extends Error {
  readonly kind: string;

  constructor(kind: string, message: string) {
    super(message);
    this.name = "BindingError";
    this.kind = kind;
  }
}

export class NativeError extends BindingError {
  readonly exitCode: number;

  constructor(exitCode: number, stderr: string) {
    const line = stderr.split("\n").find((l) => l.startsWith("error:")) ?? stderr.trim();
    super("native", line || `native CLI exited with code ${exitCode}`);
    this.name = "NativeError";
    this.exitCode = exitCode;
  }
}
