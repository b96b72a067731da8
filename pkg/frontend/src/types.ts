export type Decision = "acceptable" | "not_acceptable";
export type Polarity = "positive" | "negative";
export type ReviewStatus = "pending" | "reviewed";

export interface WorklistItem {
  sample_id: string;
  lesion: string;
  polarity: Polarity;
  template_type: string;
  status: ReviewStatus;
  decision: Decision | null;
}

export interface Worklist {
  expert: string;
  samples: WorklistItem[];
  progress: { reviewed: number; assigned: number };
}

export interface SampleDetail {
  sample_id: string;
  study_id: string;
  lesion: string;
  polarity: Polarity;
  template_type: string;
  locations: string[];
  instruction: string;
  answer_text: string;
  report: string;
}

export interface VerdictRequest {
  expert: string;
  sample: string;
  decision: Decision;
}

export interface RateCell {
  rate: number | null;
  n: number;
}

export interface RateRow {
  total: RateCell;
  positive: RateCell;
  negative: RateCell;
}

export interface ExportReport {
  kept: string[];
  excluded: string[];
  unreviewed: string[];
  report: {
    experts: Record<string, RateRow>;
    overall: RateRow;
    per_lesion: Record<string, RateRow>;
  };
}
