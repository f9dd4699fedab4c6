/** Wire types for the review service API. */
export {};
