"""Builds data/labeled/sentence_types.tsv: 300 authored sentences, 60 per type.

Sentences are composed from hand-written frames and policy nouns; see
data/labeled/LABELING.md for the labeling guide. Output is deterministic.
"""
import random

rng = random.Random(20230531)

TOPICS = ["自衛隊", "集団的自衛権", "安全保障政策", "防衛費の増額", "敵基地攻撃能力",
          "原発の再稼働", "廃炉作業", "原子力規制委員会", "ベースロード電源", "憲法改正",
          "日米同盟", "防衛装備品の輸出", "核燃料サイクル", "再生可能エネルギー", "電気料金"]

OPINION = [
    "{t}には反対です。", "{t}を進めるべきだと考えます。", "私は{t}に賛成であります。",
    "{t}は断じて認められません。", "{t}は抜本的に見直すべきです。", "{t}は必要不可欠だと確信しております。",
    "{t}には強い懸念を抱いております。", "政府は{t}を撤回すべきだ。", "{t}を憲法に明記すべきだと私は考えます。",
    "{t}は国民の命を危険にさらすものであり、容認できません。", "{t}こそが日本の未来を守る道だと信じます。",
    "{t}については慎重であるべきだと申し上げたい。", "{t}を推進することに私は全面的に賛成です。",
    "{t}は直ちに中止すべきであります。", "我が党は{t}に断固反対いたします。",
    "{t}は現実的な選択肢として評価すべきだと思います。",
]
FACT = [
    "{t}の関連予算は{n}億円計上されています。", "{t}については{y}年に閣議決定がなされました。",
    "{t}に関する法律は{y}年に施行されました。", "昨年度の{t}に係る支出は前年比{p}％増加しました。",
    "現在、{t}の対象は全国で{k}か所あります。", "{t}の議論は{y}年から国会で続いております。",
    "{t}については{k}件の報告書が公表されています。", "{y}年の調査では、{t}を支持する回答が{p}％でした。",
    "{t}の担当職員は{n}人配置されております。", "{t}は{y}年度の予算で{n}億円が措置されました。",
    "{t}に関する審査は{k}回実施されました。", "{t}の件数は前年より{k}件減少しております。",
]
QUESTION = [
    "{t}について、大臣の見解はいかがですか。", "{t}はいつまでに結論を出すのですか。",
    "なぜ{t}を急ぐ必要があるのでしょうか。", "{t}の根拠は何なのですか。",
    "{t}について政府はどのように説明するおつもりですか。", "{t}の費用は誰が負担するのでしょうか。",
    "{t}について、総理はどうお考えでしょうか。", "{t}の安全性は本当に確認されたのですか。",
    "{t}について具体的な計画はあるのですか。", "{t}の見通しについてお聞かせいただけますか。",
    "{t}に関して、国民への説明は十分だったとお考えですか。", "{t}はどの省庁が所管するのですか。",
]
DESCRIPTION = [
    "本日は{t}について議論いたします。", "次に、{t}の概要について御説明申し上げます。",
    "委員会では{t}に関する報告が行われました。", "まず、{t}の経緯を申し上げます。",
    "{t}について、これまでの取組を順に御紹介いたします。", "お手元の資料は{t}に関するものでございます。",
    "{t}の論点を三つに分けて整理いたします。", "以下、{t}に関する政府の説明を要約いたします。",
    "{t}については、先ほど参考人から説明がありました。", "続きまして、{t}の現状について申し述べます。",
    "ここで、{t}に関する審議の流れを確認いたします。", "{t}の検討状況について、担当部局から報告いたします。",
]
OTHER = [
    "ありがとうございました。", "以上で質問を終わります。", "速記を止めてください。", "速記を起こしてください。",
    "これにて散会いたします。", "委員長、議事進行について。", "お疲れさまでございました。",
    "午後一時から再開することとし、休憩いたします。", "本日はこれにて散会いたします。",
    "ただいまから会議を開きます。", "次回は追って公報をもってお知らせいたします。",
    "時間が参りましたので終わります。", "よろしくお願いいたします。", "皆様、おはようございます。",
    "これより質疑に入ります。", "質疑を終局いたします。", "御静粛に願います。", "発言を許します。",
    "答弁は簡潔にお願いします。", "では、失礼いたします。",
]
OTHER_FRAMES = [
    "{m}君。", "{m}君、御苦労さまでした。", "午後{h}時{k}分散会", "{m}委員、ありがとうございました。",
    "はい、{m}でございます。", "{m}大臣、お願いします。", "{m}君、時間が来ております。",
    "{m}参考人、ありがとうございました。", "午前{h}時{k}分開議", "{m}さん、どうぞ。",
]
NAMES = ["山田太郎", "佐藤花子", "鈴木一郎", "高橋次郎", "田中美穂", "伊藤健", "渡辺明", "中村優子",
         "小林誠", "加藤浩", "吉田修", "山口恵", "松本隆", "井上聡", "木村香"]

def fill(frame):
    return frame.format(t=rng.choice(TOPICS), m=rng.choice(NAMES), h=rng.randint(1, 11), n=rng.randint(2, 900), y=rng.randint(2011, 2023),
                        p=rng.randint(3, 78), k=rng.randint(2, 60))

def make(frames, label, count, fixed=()):
    out = [(s, label) for s in fixed]
    seen = set(s for s, _ in out)
    while len(out) < count:
        s = fill(rng.choice(frames))
        if s in seen:
            continue
        seen.add(s)
        out.append((s, label))
    return out

rows = []
rows += make(OPINION, "OPINION", 60, fixed=["私は反対です。"])
rows += make(FACT, "FACT", 60)
rows += make(QUESTION, "QUESTION", 60, fixed=["これは何条に基づくのですか。"])
rows += make(DESCRIPTION, "DESCRIPTION", 60)
rows += make(OTHER_FRAMES, "OTHER", 60, fixed=OTHER)
rng.shuffle(rows)

with open("data/labeled/sentence_types.tsv", "w", encoding="utf-8") as f:
    f.write("text\tlabel\n")
    for s, l in rows:
        f.write(f"{s}\t{l}\n")
print(len(rows))
