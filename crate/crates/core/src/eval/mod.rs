//! Objective metrics, speaker-similarity verdicts and embedding export.

pub mod cluster;
pub mod dtw;
pub mod metrics;
pub mod report;

pub use cluster::{kmeans, purity, Pca};
pub use dtw::{dtw, euclidean, Alignment};
pub use metrics::{centroid, cosine, covoiced_ratio, f0_distance, f0_rmse, mcd, speaker_similarity, Mcd, Similarity, MCD_ORDER};
pub use report::{embedding_rows, embeddings_csv, evaluate_pair, report_csv, report_jsonl, EmbKind, EmbedItem, EmbedRow, ReportRow, Side, REPORT_HEADER};
