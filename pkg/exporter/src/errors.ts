export class ValidationError extends Error {}

export class DecodeError extends Error {}
