/** Typed failures so callers can branch without string matching. */

export class EmptyMask extends Error {
  constructor(message: string) {
    super(message);
    this.name = "EmptyMask";
  }
}

export class ModelLoadFailure extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ModelLoadFailure";
  }
}

export class MissingAnnotation extends Error {
  constructor(message: string) {
    super(message);
    this.name = "MissingAnnotation";
  }
}
